"""EM engine tests."""
