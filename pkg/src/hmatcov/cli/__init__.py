"""Command line interface and file formats."""

from .formats import (InputFormatError, format_dataset, parse_input_file, parse_input_text,
                      parse_iteration_log, parse_replicate_csv, write_dataset,
                      write_iteration_log, write_profile_csv, write_replicate_csv,
                      write_table_csv)
from .main import RunConfig, build_parser, main, run_command
