"""Exception types shared across the toolchain."""


class CsdPimError(Exception):
    """Base class for all toolchain errors."""

    code = "error"

    def payload(self) -> dict:
        return {"code": self.code, "message": str(self)}


class ConfigError(CsdPimError):
    code = "config"


class ShapeError(CsdPimError):
    code = "shape"


class FormatError(CsdPimError):
    code = "format"


class AccumulatorOverflow(CsdPimError):
    """Accumulated partial sum left the 32-bit semantic range."""

    code = "overflow"
