"""Settings, structured logging and the solver error hierarchy."""
