"""Exception hierarchy shared by all subsystems.

Every error carries a short machine-readable ``code`` (for example
``"TRUNCATED"`` or ``"SENDER_UNKNOWN"``) so callers and tests can branch on
the failure class without parsing messages.
"""


class HybridItsError(Exception):
    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class GeodesyError(HybridItsError):
    pass


class CodecError(HybridItsError):
    pass


class NetsimError(HybridItsError):
    pass


class ChannelSelectionError(HybridItsError):
    pass


class CentralError(HybridItsError):
    pass


class BrokerError(HybridItsError):
    pass


class PerceptionError(HybridItsError):
    pass


class SecurityError(HybridItsError):
    pass


class ScenarioError(HybridItsError):
    """Raised when a scenario document fails validation.

    ``diagnostics`` holds one ``(path, message)`` pair per violation.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{p}: {m}" for p, m in self.diagnostics)
        super().__init__("SCENARIO_INVALID", lines)
