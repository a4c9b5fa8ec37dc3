from rest_framework import status
from rest_framework.pagination import PageNumberPagination

from app.global_constants import SuccessMessage
from app.utils import get_response_schema


class DecisionPagination(PageNumberPagination):
    """
        Pages of the decision list, sized by ``?size=`` (capped at max_page_size).
        A page past the end returns the last page instead of a 404.
    """

    page_size_query_param = 'size'
    max_page_size = 500

    def paginate_queryset(self, queryset, request, view=None):
        self.request = request
        self.page_size = self.get_page_size(request)
        paginator = self.django_paginator_class(queryset, self.page_size)
        self.page = paginator.get_page(request.query_params.get(self.page_query_param, 1))
        return list(self.page)

    def get_paginated_response(self, data):
        return get_response_schema(
            {
                'count': self.page.paginator.count,
                'page': self.page.number,
                'pages': self.page.paginator.num_pages,
                'next': self.get_next_link(),
                'previous': self.get_previous_link(),
                'decisions': data,
            },
            SuccessMessage.RECORD_RETRIEVED.value,
            status.HTTP_200_OK,
        )
