import os

import numpy as np


def normalize_option(value, parameter_name="value"):
    """Normalize enum-like string options for case-insensitive validation."""
    if not isinstance(value, str):
        raise ValueError(f"`{parameter_name}` should be a string value.")
    return value.strip().lower()

def check_option(value, valid_options, parameter_name="value"):
    """
    Normalize `value` and check it against a `VALID_*` list.
    """
    value = normalize_option(value, parameter_name)
    if value not in valid_options:
        raise ValueError(f"`{parameter_name}` should be one of {valid_options}, got '{value}'.")
    return value

def is_power_of_two(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0

def check_power_of_two(n, parameter_name="n"):
    if not is_power_of_two(n):
        raise ValueError(f"`{parameter_name}` should be a positive power of two, got {n}.")
    return int(n)

def check_positive(value, parameter_name="value"):
    if not isinstance(value, (int, float, np.integer, np.floating)) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"`{parameter_name}` should be a finite number greater than 0.")
    return value

def check_positive_int(value, parameter_name="value", minimum=1):
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < minimum:
        raise ValueError(f"`{parameter_name}` should be an integer value of at least {minimum}.")
    return int(value)

def integer_ratio(numerator, denominator, parameter_name="value", rtol=1e-9):
    """
    Return numerator/denominator as an int, or raise if it is not integral.

    Floating time constants such as 0.25/2.5e-3 are not exactly 100 in binary,
    so the check uses a relative tolerance.
    """
    ratio = numerator / denominator
    n = int(round(ratio))
    if abs(ratio - n) > rtol * max(1.0, abs(ratio)):
        raise ValueError(f"`{parameter_name}` should be an integer multiple ({numerator} / {denominator} = {ratio}).")
    return n

def as_matrix(X, parameter_name="X", allow_empty=False):
    """
    Coerce `X` to a 2-D float64 array.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"`{parameter_name}` should be a 2-D array, got shape {X.shape}.")
    if not allow_empty and X.shape[0] == 0:
        raise ValueError(f"`{parameter_name}` should contain at least one row.")
    return X

def check_file_existence(file):
    # Validate file existence
    if not os.path.exists(file):
        raise FileNotFoundError(f"The specified file '{file}' does not exist on path.")
    return
