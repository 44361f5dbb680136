"""Rate vs. direct input coding for spiking networks: training, attacks and energy estimates."""

__version__ = "0.1.0"
