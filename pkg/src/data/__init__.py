"""Synthetic benchmark generation and the dataset file format"""
from src.data.generator import CaseSpec, CaseGenerator, generate_case, generate_cases, two_mode_fixture, train_test_split
from src.data.dataset_io import checksum, decode_dataset, encode_dataset, read_dataset, write_dataset

__all__ = [
    "CaseSpec",
    "CaseGenerator",
    "generate_case",
    "generate_cases",
    "two_mode_fixture",
    "train_test_split",
    "encode_dataset",
    "decode_dataset",
    "read_dataset",
    "write_dataset",
    "checksum",
]
