import logging

from drf_yasg import openapi
from drf_yasg.utils import swagger_auto_schema
from rest_framework import status
from rest_framework.generics import GenericAPIView, ListAPIView

from app.global_constants import SuccessMessage
from app.utils import get_response_schema
from permissions import IsStudyAdmin
from .engine import get_engine
from .serializers import (DecisionDisplaySerializer, DecisionRequestSerializer, ParticipantSerializer,
                          RegisterSerializer, RewardSerializer, UpdateSerializer)
from .pagination import DecisionPagination

logger = logging.getLogger(__name__)


class RegisterUserView(GenericAPIView):
    """POST /api/study/users/"""
    serializer_class = RegisterSerializer

    @swagger_auto_schema(
        operation_description='Register a participant. Re-registering the same external id returns the same user.',
        request_body=RegisterSerializer,
        responses={201: ParticipantSerializer, 200: ParticipantSerializer}
    )
    def post(self, request):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        participant, created = get_engine().register(**serializer.validated_data)
        if created:
            return get_response_schema(ParticipantSerializer(participant).data, SuccessMessage.USER_REGISTERED.value,
                                       status.HTTP_201_CREATED)
        return get_response_schema(ParticipantSerializer(participant).data, SuccessMessage.RECORD_RETRIEVED.value,
                                   status.HTTP_200_OK)


class UserDetailView(GenericAPIView):
    """GET /api/study/users/<user_id>/"""
    serializer_class = ParticipantSerializer

    def get(self, request, user_id):
        participant = get_engine().participant(user_id)
        return get_response_schema(self.get_serializer(participant).data, SuccessMessage.RECORD_RETRIEVED.value,
                                   status.HTTP_200_OK)


class DecisionView(GenericAPIView):
    """POST /api/study/decision/"""
    serializer_class = DecisionRequestSerializer

    @swagger_auto_schema(
        operation_description='Serve the next decision for a user from the latest posterior snapshot.',
        request_body=DecisionRequestSerializer,
        responses={201: DecisionDisplaySerializer}
    )
    def post(self, request):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        decision = get_engine().decide(**serializer.validated_data)
        return get_response_schema(DecisionDisplaySerializer(decision).data, SuccessMessage.DECISION_SERVED.value,
                                   status.HTTP_201_CREATED)


class RewardView(GenericAPIView):
    """POST /api/study/reward/"""
    serializer_class = RewardSerializer

    @swagger_auto_schema(
        operation_description='Record the raw reward (0-3) of a served decision; each decision takes one reward.',
        request_body=RewardSerializer,
        responses={200: DecisionDisplaySerializer}
    )
    def post(self, request):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        decision = get_engine().record_reward(serializer.validated_data['decision_id'],
                                              serializer.validated_data['reward'])
        return get_response_schema(DecisionDisplaySerializer(decision).data, SuccessMessage.REWARD_RECORDED.value,
                                   status.HTTP_200_OK)


class DecisionListView(ListAPIView):
    serializer_class = DecisionDisplaySerializer
    pagination_class = DecisionPagination

    def get_queryset(self):
        # filter by user
        user = self.request.query_params.get('user', None)
        if user is not None and user.isdigit():
            return get_engine().list_decisions(int(user))
        return get_engine().list_decisions()

    @swagger_auto_schema(
        manual_parameters=[
            openapi.Parameter('user', openapi.IN_QUERY, description="Only this user's decisions",
                              type=openapi.TYPE_INTEGER),
        ]
    )
    def get(self, request, *args, **kwargs):
        return super().get(request, *args, **kwargs)


class AdminUpdateView(GenericAPIView):
    """POST /api/study/admin/update/"""
    permission_classes = [IsStudyAdmin]
    serializer_class = UpdateSerializer

    @swagger_auto_schema(
        operation_description='Run the nightly posterior update, or the weekly hyperparameter and posterior update.',
        request_body=UpdateSerializer,
        responses={200: 'Update report with hyperparameters before and after'}
    )
    def post(self, request):
        serializer = self.get_serializer(data=request.data)
        serializer.is_valid(raise_exception=True)
        report = get_engine().update(serializer.validated_data['kind'])
        return get_response_schema(report, SuccessMessage.UPDATE_APPLIED.value, status.HTTP_200_OK)


class SnapshotView(GenericAPIView):
    """GET /api/study/snapshot/"""

    def get(self, request):
        return get_response_schema(get_engine().status(), SuccessMessage.RECORD_RETRIEVED.value, status.HTTP_200_OK)
