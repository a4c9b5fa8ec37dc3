"""Decision-service errors; app/exceptions.py maps them onto HTTP statuses."""
from app.bandit.exceptions import BanditError


class StudyFullError(BanditError):
    """Registration beyond the study's user cap."""


class DuplicateRegistrationError(BanditError):
    """An external id registered again with a different payload."""


class UnknownUserError(BanditError):
    pass


class UnknownDecisionError(BanditError):
    pass


class RewardConflictError(BanditError):
    """A reward was already recorded for the decision."""


class ReplayMismatchError(BanditError):
    """Journal replay did not reproduce a logged draw, decision or snapshot."""
