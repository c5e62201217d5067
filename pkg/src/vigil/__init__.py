"""vigil: an emergency-tracking gateway.

Ingests wearable heart-rate packets, accelerometer samples and GPS
sentences, detects emergencies through a debounced threshold state
machine with a cancelable countdown, and fans location-bearing alerts
out to SMS, email, social-wall and microcontroller sinks.
"""

__version__ = "0.1.0"
