"""PGRD test suite"""
