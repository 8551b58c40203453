"""Run configuration, domain types and errors"""
