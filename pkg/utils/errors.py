# /superlab/utils/errors.py


class LabError(Exception):
    """Base error. Rendered as '<module>:<code>: <detail>' so the CLI can surface it verbatim."""

    module = "superlab"

    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        message = f"{self.module}:{code}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class KernelError(LabError):
    module = "kernel"


class NoiseError(LabError):
    module = "noise"


class ParticleError(LabError):
    module = "particle"


class MalliavinError(LabError):
    module = "malliavin"


class SpdeError(LabError):
    module = "spde"


class RegularityError(LabError):
    module = "regularity"


class ConfigError(LabError):
    module = "config"
