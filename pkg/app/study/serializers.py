from rest_framework import serializers

from app.bandit.policy import REWARD_VALUES
from app.study.engine import UPDATE_KINDS


class RegisterSerializer(serializers.Serializer):
    external_id = serializers.CharField(max_length=128)
    metadata = serializers.DictField(required=False, default=dict)


class DecisionRequestSerializer(serializers.Serializer):
    user_id = serializers.IntegerField(min_value=0)
    survey_completion = serializers.IntegerField(min_value=0, max_value=1)
    app_usage = serializers.IntegerField(min_value=0, max_value=1)
    activity = serializers.CharField(required=False, allow_null=True, allow_blank=True, default=None)
    # null when the user skipped the question
    cannabis_report = serializers.BooleanField(required=False, allow_null=True, default=None)


class RewardSerializer(serializers.Serializer):
    decision_id = serializers.IntegerField(min_value=0)
    reward = serializers.ChoiceField(choices=REWARD_VALUES)


class UpdateSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=UPDATE_KINDS)


class DecisionDisplaySerializer(serializers.Serializer):
    decision_id = serializers.IntegerField()
    user_id = serializers.IntegerField()
    t = serializers.IntegerField()
    state = serializers.SerializerMethodField()
    pi = serializers.FloatField()
    action = serializers.IntegerField()
    snapshot = serializers.IntegerField()
    raw_reward = serializers.IntegerField(allow_null=True)
    engineered_reward = serializers.FloatField(allow_null=True)

    def get_state(self, obj):
        return list(obj.state.as_tuple())


class ParticipantSerializer(serializers.Serializer):
    user_id = serializers.IntegerField()
    external_id = serializers.CharField()
    metadata = serializers.DictField()
    decisions = serializers.SerializerMethodField()
    rewards = serializers.SerializerMethodField()

    def get_decisions(self, obj):
        return len(obj.decision_ids)

    def get_rewards(self, obj):
        return len(obj.rewards)
