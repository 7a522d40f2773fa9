"""Time-dependent EDCA performance of platooned vehicles under a speed disturbance."""

