# Unit tests for agent modules
