"""Multi-directional ECG/PPG/ABP waveform conversion with blood-pressure refinement."""

__version__ = "0.1.0"
