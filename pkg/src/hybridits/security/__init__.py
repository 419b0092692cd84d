"""PKI, pseudonyms, access control, linkability and misbehaviour supervision."""

from .access import LINKABILITY, AccessAuthority, AccessToken, Decision
from .crypto import KeyPair, verify_signature
from .linkability import LinkabilityManager
from .pki import (
    AT_VALIDITY_MS,
    DEFAULT_POOL_SIZE,
    AuthorizationTicket,
    Certificate,
    Crl,
    EnrolmentCredential,
    Pki,
    Pseudonym,
    TrustStore,
    rotate,
    sign,
    sign_envelope,
    verify,
    verify_chain,
    verify_ticket,
)
from .supervision import Alert, EventType, SecurityEvent, SupervisionConfig, SupervisionEngine
