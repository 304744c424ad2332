"""Proactive autoscaling workbench for checkpointed stream-processing jobs.

The package couples a deterministic cluster simulator with a profiling
pipeline, QoS models (latency validity and recovery time), a set of scaling
policies, and a CLI harness for running scaling experiments with failure
injection.
"""

__version__ = "0.1.0"
