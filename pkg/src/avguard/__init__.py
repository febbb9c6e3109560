"""avguard: audio-visual adversarial attacks and synchronisation-based detection, desk scale.

The toolkit generates correlated synthetic audio-video clips, trains toy
two-stream recognizers, crafts white-box adversarial examples against
them, and detects those examples through an audio-visual synchronisation
confidence score.
"""

__version__ = "0.1.0"
