"""Clinical-impact evaluation toolkit for ASR transcripts of
doctor-patient dialogue."""

__version__ = "0.1.0"
