"""Core package - experiment orchestration"""
from src.core.orchestrator import ExperimentOrchestrator, LoadedRun
