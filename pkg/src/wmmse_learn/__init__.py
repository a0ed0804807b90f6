"""WMMSE power control and neural approximations of it."""
