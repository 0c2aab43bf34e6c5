from pathlib import Path

from dotenv import dotenv_values, find_dotenv

from ..model.Base import ConfigError
from ..model.ConfigModel import PacemakerConfig
from .Constants import Env


class EnvConfig:
    """封装 .env 文件加载与访问, 为命令行提供默认配置"""

    def __init__(self, envpath: str | Path | None = None, default_name: str = ".env.hotstuffsim"):
        self.path = self._resolve_path(envpath, default_name)
        self._config = dotenv_values(self.path) if self.path is not None else {}

    # -------------------- 路径处理 --------------------

    def _resolve_path(self, envpath: str | Path | None, default_name: str) -> Path | None:
        """解析配置文件路径; 找不到时返回 None, 只使用内置默认值"""
        if envpath:
            path = Path(envpath).expanduser()
            if not path.exists():
                raise ConfigError(f"配置文件不存在: {path}")
            return path

        found = find_dotenv(usecwd=True)
        if found:
            return Path(found)

        path = Path.home() / default_name
        return path if path.exists() else None

    # -------------------- 配置访问 --------------------

    def get(self, key: str, default: str = "") -> str:
        """获取配置项，若不存在则返回默认值"""
        return (self._config.get(key) or default).strip()

    def get_int(self, key: str, default: int = 0) -> int:
        """获取整数配置项，若不存在或无法转换则返回默认值"""
        val = self.get(key)
        try:
            return int(val)
        except ValueError:
            return default

    def get_float(self, key: str, default: float = 0.0) -> float:
        val = self.get(key)
        try:
            return float(val)
        except ValueError:
            return default

    # -------------------- 领域配置 --------------------

    def crypto(self) -> str:
        """密码学后端, 目前只有 mock"""
        name = self.get(Env.CRYPTO, "mock").lower()
        if name != "mock":
            raise ConfigError(f"不支持的密码学后端: {name}")
        return name

    def seed(self, default: int = 0) -> int:
        return self.get_int(Env.SEED, default)

    def pacemaker(self) -> PacemakerConfig:
        """从环境变量构造 PacemakerConfig, 未设置的键使用模型默认值"""
        base = PacemakerConfig()
        values = {
            "kind": self.get(Env.PACEMAKER_KIND, base.kind.value).upper(),
            "base_timeout": self.get_int(Env.PACEMAKER_BASE_TIMEOUT, base.base_timeout),
            "backoff_factor": self.get_float(Env.PACEMAKER_BACKOFF_FACTOR, base.backoff_factor),
            "beat_policy": self.get(Env.PACEMAKER_BEAT_POLICY, base.beat_policy.value).upper(),
        }
        try:
            return PacemakerConfig.model_validate(values)
        except ValueError as e:
            raise ConfigError(f"Pacemaker 配置无效: {e}") from e

    # -------------------- 打印与调试 --------------------
    def __repr__(self):
        return f"<EnvConfig path='{self.path}' values={self._config}>"

    def __str__(self):
        items = ", ".join(f"{k}={v}" for k, v in self._config.items())
        return f"EnvConfig({self.path}): " + items
