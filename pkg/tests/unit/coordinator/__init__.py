# Unit tests for coordinator modules
