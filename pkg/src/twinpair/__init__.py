"""Twin-pair co-simulation runtime.

A physical twin and a digital twin run as separate co-simulations coupled
over a message broker.  The digital side can augment the physical side with
a richer controller, or stand by as a hot replica that takes over when a
physical component dies.
"""

__version__ = "0.1.0"
