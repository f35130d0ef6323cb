from .guards import AlignmentError, check_finite, check_nonzero_rows, check_same_shape
from .audit import AuditRecord, write_audit_log
