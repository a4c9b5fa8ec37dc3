from django.urls import path

from app.study.views import AdminUpdateView, DecisionListView, DecisionView, RegisterUserView, RewardView, \
    SnapshotView, UserDetailView

urlpatterns = [
    path('users/', RegisterUserView.as_view(), name='study-register'),
    path('users/<int:user_id>/', UserDetailView.as_view(), name='study-user'),
    path('decision/', DecisionView.as_view(), name='study-decision'),
    path('reward/', RewardView.as_view(), name='study-reward'),
    path('decisions/', DecisionListView.as_view(), name='study-decisions'),
    path('admin/update/', AdminUpdateView.as_view(), name='study-update'),
    path('snapshot/', SnapshotView.as_view(), name='study-snapshot'),
]
