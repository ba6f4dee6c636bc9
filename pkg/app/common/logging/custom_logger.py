from typing import Any, Optional


class LogContext:
    """Structured failure context attached to a log event as `log_data`."""

    context: str
    message: Optional[str]
    data: Optional[Any]
    exception: Optional[Exception]

    def __init__(
        self,
        context: str,
        message: Optional[str] = None,
        data: Any = None,
        exception: Optional[Exception] = None,
    ):
        self.context = context
        self.message = message
        self.data = data
        self.exception = exception

    def as_dict(self) -> dict[str, Any]:
        fields = {"context": self.context, "message": self.message, "data": self.data}
        if self.exception is not None:
            fields["exception"] = f"{type(self.exception).__name__}: {self.exception}"
        return {k: v for k, v in fields.items() if v is not None}
