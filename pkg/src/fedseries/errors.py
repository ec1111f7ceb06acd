class FedSeriesError(Exception):
    """User or data error; the CLI maps it to exit code 1."""


class DataError(FedSeriesError):
    pass


class TrainingDivergence(FedSeriesError):
    pass
