"""Configuration, validation data, metrics, analyses and studies."""
