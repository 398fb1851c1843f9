import os

import pandas as pd


FLOAT_FORMAT = "%.17g"


class Logger(object):
    def __init__(self, path, flush_every=50, columns=None):
        """Create a CSV metrics writer appending rows to 'path'; 'columns' fixes the header."""
        self.path = path
        self.flush_every = flush_every
        self.columns = list(columns) if columns is not None else None
        self.rows = []
        self.header_written = os.path.exists(path) and os.path.getsize(path) > 0

    def scalar_summary(self, tag, value, step):
        """Log a scalar variable."""
        self.list_of_scalars_summary([(tag, value)], step)

    def list_of_scalars_summary(self, tag_value_pairs, step):
        """Log one row of scalar variables."""
        row = {"iter": step}
        row.update(tag_value_pairs)
        self.rows.append(row)
        if len(self.rows) >= self.flush_every:
            self.flush()

    def flush(self):
        if not self.rows:
            return
        frame = pd.DataFrame(self.rows, columns=self.columns)
        frame.to_csv(self.path, mode="a", header=not self.header_written, index=False, float_format=FLOAT_FORMAT)
        self.header_written = True
        self.rows = []

    def close(self):
        self.flush()
        # A run without rows still leaves a header behind
        if not self.header_written and self.columns is not None:
            pd.DataFrame(columns=self.columns).to_csv(self.path, index=False)
            self.header_written = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Reads a metrics CSV back with bit-exact floats"""
    return pd.read_csv(path, float_precision="round_trip")


def write_table(rows, path):
    pd.DataFrame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
