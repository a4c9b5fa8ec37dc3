from enum import Enum

class SuccessMessage(str, Enum):

    RECORD_RETRIEVED = "Record retrieved successfully."

    USER_REGISTERED = "User registered successfully."
    DECISION_SERVED = "Decision served."
    REWARD_RECORDED = "Reward recorded."
    UPDATE_APPLIED = "Update applied."


class ErrorMessage(str, Enum):

    SOMETHING_WENT_WRONG = "Something went wrong, please try again."
    FORBIDDEN = "Not Authorized."
    NOT_FOUND = "Resource not found."
    UNAUTHORIZED = "Not Authenticated"

    INVALID_PAYLOAD = "Invalid payload."
    STUDY_FULL = "The study is full."
    ALREADY_REGISTERED = "External id is registered with a different payload."
    REWARD_CONFLICT = "A reward was already recorded for this decision."
    NUMERICAL_FAILURE = "Numerical failure while computing the decision."
