"""
TGM 包初始化文件
"""

from .logging_config import (
    LoggerManager,
    EventLog,
    get_vgm_logger,
    get_structure_logger,
    get_agent_logger,
    get_cli_logger,
    get_performance_logger,
    LogContext
)

from .exceptions import (
    TGMError,
    InvalidInputError,
    NotPositiveDefiniteError,
    MazeParseError,
    ConfigurationError,
    StateError,
    ConvergenceError,
    CheckpointError
)

__all__ = [
    # 日誌相關
    'LoggerManager',
    'EventLog',
    'get_vgm_logger',
    'get_structure_logger',
    'get_agent_logger',
    'get_cli_logger',
    'get_performance_logger',
    'LogContext',

    # 異常
    'TGMError',
    'InvalidInputError',
    'NotPositiveDefiniteError',
    'MazeParseError',
    'ConfigurationError',
    'StateError',
    'ConvergenceError',
    'CheckpointError'
]

# 版本信息
__version__ = '0.1.0'
