"""Two-chain education records ledger with replica consistency auditing."""

__version__ = "0.1.0"
