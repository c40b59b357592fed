import json
import os
from pathlib import Path
from typing import Type, TypeVar, Union

from pydantic import BaseModel

from ..schemas.harness import DynamicTestSuite, StaticSuite

ModelT = TypeVar("ModelT", bound=BaseModel)


def ensure_dir(path: str) -> str:
    """Create directory if it doesn't exist"""
    os.makedirs(path, exist_ok=True)
    return path


def save_model(model: BaseModel, destination: str) -> str:
    """Write a pydantic model as indented JSON"""
    parent = os.path.dirname(destination)
    if parent:
        ensure_dir(parent)
    Path(destination).write_text(model.model_dump_json(indent=2), encoding="utf-8")
    return destination


def load_model(model_cls: Type[ModelT], source: str) -> ModelT:
    return model_cls.model_validate_json(Path(source).read_text(encoding="utf-8"))


def load_suite(source: str) -> Union[DynamicTestSuite, StaticSuite]:
    """Dynamic suites carry `entries`, static ones `tests`"""
    data = json.loads(Path(source).read_text(encoding="utf-8"))
    if "entries" in data:
        return DynamicTestSuite.model_validate(data)
    return StaticSuite.model_validate(data)


def artifact_path(output_dir: str, game: str, kind: str, extension: str = "json") -> str:
    return os.path.join(output_dir, f"{game}.{kind}.{extension}")
