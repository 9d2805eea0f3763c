"""Statistics tests."""
