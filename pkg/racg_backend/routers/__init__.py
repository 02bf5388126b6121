from fastapi import HTTPException, status

from racg_backend.errors import (
    ConfigError, ContractViolation, GatewayError, IngestError, InputError, PreflightError, RacgError,
    TemplateError, ToolchainMissingError,
)

# Engine errors -> HTTP status codes
STATUS_BY_ERROR = [
    (ToolchainMissingError, status.HTTP_503_SERVICE_UNAVAILABLE),
    (GatewayError, status.HTTP_503_SERVICE_UNAVAILABLE),
    (PreflightError, status.HTTP_422_UNPROCESSABLE_ENTITY),
    (ContractViolation, status.HTTP_422_UNPROCESSABLE_ENTITY),
    (InputError, status.HTTP_400_BAD_REQUEST),
    (IngestError, status.HTTP_400_BAD_REQUEST),
    (ConfigError, status.HTTP_400_BAD_REQUEST),
    (TemplateError, status.HTTP_500_INTERNAL_SERVER_ERROR),
]


def http_error(e: RacgError) -> HTTPException:
    for error_type, code in STATUS_BY_ERROR:
        if isinstance(e, error_type):
            return HTTPException(status_code=code, detail=str(e))
    return HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(e))
