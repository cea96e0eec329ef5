"""
TGM 結構化日誌系統配置

該模組提供：
1. JSON 格式的結構化日誌
2. 日誌輪轉機制
3. 性能日誌記錄
4. 組件級別的日誌器
5. 結構事件日誌（JSON lines）
"""

import logging
import logging.handlers
import json
import os
import sys
from datetime import datetime, timezone
from typing import Dict, Any, Optional, Union
from pathlib import Path
import traceback
import uuid
from functools import wraps
import time


# TGM_LOG_LEVEL 接受的取值
LEVEL_NAMES = {
    'error': 'ERROR',
    'warn': 'WARNING',
    'warning': 'WARNING',
    'info': 'INFO',
    'debug': 'DEBUG',
}


def resolve_level(name: Optional[str], default: str = 'INFO') -> str:
    """將 error|warn|info|debug 轉換為 logging 級別名稱"""
    if not name:
        return default
    return LEVEL_NAMES.get(name.strip().lower(), default)


class StructuredFormatter(logging.Formatter):
    """結構化 JSON 格式化器"""

    def __init__(self, component: str = "unknown", include_details: bool = True):
        super().__init__()
        self.component = component
        self.include_details = include_details
        self.hostname = os.environ.get('HOSTNAME', 'localhost')

    def format(self, record: logging.LogRecord) -> str:
        """格式化日誌記錄為 JSON"""
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z'),
            "level": record.levelname,
            "component": getattr(record, 'component', self.component),
            "message": record.getMessage(),
            "logger": record.name,
            "hostname": self.hostname,
        }

        if hasattr(record, 'context'):
            log_data['context'] = record.context

        if hasattr(record, 'request_id'):
            log_data['request_id'] = record.request_id

        if record.exc_info:
            log_data['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info)
            }

        if self.include_details:
            extra_fields = {
                'filename': record.filename,
                'line_number': record.lineno,
                'function': record.funcName,
                'process_id': record.process,
            }
            log_data['details'] = {k: v for k, v in extra_fields.items() if v}

        return json.dumps(log_data, ensure_ascii=False, default=str)


class PerformanceLogger:
    """性能日誌記錄器：記錄一次擬合、訓練等操作的耗時"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def _record(self, level: int, operation: str, request_id: str, message: str,
                exc_info: bool = False, **context: Any) -> None:
        self.logger.log(
            level,
            message,
            extra={
                'component': 'performance',
                'request_id': request_id,
                'context': {'operation': operation, **context},
            },
            exc_info=exc_info,
        )

    def log_timing(self, operation: str):
        """裝飾器：記錄函數執行時間，失敗時附帶異常後重新拋出"""
        def decorator(func):
            @wraps(func)
            def wrapper(*args, **kwargs):
                request_id = uuid.uuid4().hex
                started = time.perf_counter()
                self._record(logging.DEBUG, operation, request_id, f"{operation} started")
                try:
                    result = func(*args, **kwargs)
                except Exception as e:
                    self._record(logging.ERROR, operation, request_id, f"{operation} failed",
                                 exc_info=True, status='failed', error=str(e),
                                 elapsed_time=time.perf_counter() - started)
                    raise
                self._record(logging.INFO, operation, request_id, f"{operation} completed",
                             status='success', elapsed_time=time.perf_counter() - started)
                return result
            return wrapper
        return decorator


def setup_logger(
    name: str,
    component: str,
    log_level: str = "INFO",
    log_dir: Optional[str] = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
) -> logging.Logger:
    """
    設置結構化日誌器

    Args:
        name: 日誌器名稱
        component: 組件名稱（如 vgm, structure, agent）
        log_level: 日誌級別
        log_dir: 日誌目錄；None 時只輸出到控制台
        max_bytes: 單個日誌文件最大大小
        backup_count: 保留的備份文件數量

    Returns:
        配置好的日誌器
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level.upper()))

    # 避免重複添加處理器
    if logger.handlers:
        return logger

    formatter = StructuredFormatter(component)

    # stdout 保留給 CLI 報告輸出
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_dir:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            filename=log_path / f"{component}.log",
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


class LoggerManager:
    """日誌管理器，提供集中的日誌器配置和管理"""

    _instance = None
    _loggers: Dict[str, logging.Logger] = {}

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        self.log_dir = os.environ.get('TGM_LOG_DIR') or None
        self.log_level = resolve_level(os.environ.get('TGM_LOG_LEVEL'))

    def get_logger(self, component: str) -> logging.Logger:
        """獲取或創建組件日誌器"""
        if component not in self._loggers:
            self._loggers[component] = setup_logger(
                name=f"tgm.{component}",
                component=component,
                log_level=self.log_level,
                log_dir=self.log_dir,
            )
        return self._loggers[component]

    def set_level(self, level_name: str) -> None:
        """調整所有已創建組件日誌器的級別"""
        self.log_level = resolve_level(level_name, self.log_level)
        for logger in self._loggers.values():
            logger.setLevel(getattr(logging, self.log_level))

    def get_performance_logger(self, component: str) -> PerformanceLogger:
        """獲取性能日誌器"""
        return PerformanceLogger(self.get_logger(component))


# 預定義的組件日誌器
def get_vgm_logger() -> logging.Logger:
    """獲取 VGM 日誌器"""
    return LoggerManager().get_logger("vgm")


def get_structure_logger() -> logging.Logger:
    """獲取結構學習日誌器"""
    return LoggerManager().get_logger("structure")


def get_agent_logger() -> logging.Logger:
    """獲取智能體日誌器"""
    return LoggerManager().get_logger("agent")


def get_cli_logger() -> logging.Logger:
    """獲取 CLI 日誌器"""
    return LoggerManager().get_logger("cli")


def get_performance_logger(component: str) -> PerformanceLogger:
    """獲取性能日誌器"""
    return LoggerManager().get_performance_logger(component)


class EventLog:
    """
    結構事件日誌：每個事件寫成一行帶時間戳的 JSON。

    事件名作為 message，事件字段放在 context 中。
    path 為 None 時事件只保留在記憶體中（測試與 0 輸出場景）。
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, name: Optional[str] = None):
        self.path = Path(path) if path is not None else None
        self.records: list = []
        self._logger = logging.getLogger(name or f"tgm.events.{uuid.uuid4().hex[:8]}")
        self._logger.setLevel(logging.INFO)
        self._logger.propagate = False
        self._handler: Optional[logging.Handler] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handler = logging.FileHandler(self.path, mode='a', encoding='utf-8')
            self._handler.setFormatter(StructuredFormatter('events', include_details=False))
            self._logger.addHandler(self._handler)

    def emit(self, event: str, **fields: Any) -> None:
        """記錄一個結構事件"""
        self.records.append({'event': event, **fields})
        if self._handler is not None:
            self._logger.info(event, extra={'component': 'structure', 'context': fields})

    def close(self) -> None:
        if self._handler is not None:
            self._logger.removeHandler(self._handler)
            self._handler.close()
            self._handler = None


# 日誌上下文管理器
class LogContext:
    """日誌上下文管理器，用於添加運行級別的上下文信息"""

    def __init__(self, logger: logging.Logger, **context):
        self.logger = logger
        self.context = context
        self.request_id = context.get('request_id', str(uuid.uuid4()))

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is not None:
            self.log('error', f"{self.context.get('operation', 'operation')} failed",
                     error=str(exc_val))
        return False

    def log(self, level: str, message: str, **extra_context):
        """記錄帶上下文的日誌"""
        context = {**self.context, **extra_context}
        extra = {
            'request_id': self.request_id,
            'context': context
        }

        log_method = getattr(self.logger, level.lower())
        log_method(message, extra=extra)
