""" Environment configuration for the token fusion engine """

import os


# =============================================================================
# Environment variable names
# =============================================================================

# Environment variable name for the logging level
ENV_LOG_LEVEL = 'TOKFUSE_LOG_LEVEL'
# Environment variable name for turning on non-finite value detection
ENV_DETECT_ANOMALY = 'TOKFUSE_DETECT_ANOMALY'
# Environment variable name for the default output folder
ENV_OUT_DIR = 'TOKFUSE_OUT_DIR'
# Environment variable name for the shipped configuration files
ENV_DEFAULT_CONFIGS_PATH = 'TOKFUSE_DEFAULT_CONFIGS_PATH'
# Environment variable name for the number of preprocessing threads
ENV_WORKERS = 'TOKFUSE_WORKERS'


# =============================================================================
# Environment variable values
# =============================================================================

# Logging level name
DEFAULT_LOG_LEVEL = 'INFO'
LOG_LEVEL = os.environ.get(ENV_LOG_LEVEL, DEFAULT_LOG_LEVEL).upper()

# Anomaly detection is off unless the variable holds a truthy value
DETECT_ANOMALY = os.environ.get(ENV_DETECT_ANOMALY, '0').strip().lower() in \
                                                                ('1', 'true', 'yes', 'on')

# Where run artifacts go when neither the config nor --out name a folder
DEFAULT_OUT_DIR = os.environ.get(ENV_OUT_DIR, os.path.join(os.getcwd(), 'runs'))

# Folder with the shipped JSON configurations
DEFAULT_CONFIGS_PATH = os.environ.get(ENV_DEFAULT_CONFIGS_PATH,
                                      os.path.join(os.path.abspath(os.path.dirname(__file__)),
                                                   'defaultConfigs'))

# Preprocessing thread count
DEFAULT_WORKERS = 4
try:
    WORKERS = max(1, int(os.environ.get(ENV_WORKERS, DEFAULT_WORKERS)))
except ValueError:
    print(f'WARNING: ignoring non-integer {ENV_WORKERS} value, using {DEFAULT_WORKERS}',
          flush=True)
    WORKERS = DEFAULT_WORKERS
