"""Exception hierarchy shared by every subpackage."""


class ParamStudyError(Exception):
    """Base class for all errors raised by paramstudy."""


class ConfigError(ParamStudyError):
    pass


class InvalidParamSetError(ParamStudyError):
    pass


class EmptyDesignError(ParamStudyError):
    pass


class DesignInfeasibleError(ParamStudyError):
    pass


class IncompleteTableError(ParamStudyError):
    pass


class CorruptDesignError(ParamStudyError):
    pass


class MalformedWorkflowError(ParamStudyError):
    pass


class PurityViolationError(ParamStudyError):
    pass


class UnstorableError(ParamStudyError):
    pass


class MissingRegionError(ParamStudyError):
    pass


class ShapeError(ParamStudyError):
    pass


class UndefinedMetricError(ParamStudyError):
    pass
