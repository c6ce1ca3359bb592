"""Tests directory for StateIS."""

# Run tests with: pytest
# Skip the replicate studies: pytest -m "not slow"
# Or with coverage: pytest --cov=stateis
