"""Report export package"""
from src.export.report_exporter import ReportExporter
