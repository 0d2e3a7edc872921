"""A miniature label-location indexer used as a test fixture."""
