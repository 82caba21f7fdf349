from __future__ import annotations

from typing import Any, Protocol, runtime_checkable


@runtime_checkable
class ArrayOps(Protocol):
    """Backend the model equations are written against.

    Both the plain numpy backend and the recording tape implement it, so a loss is
    built once and either evaluated or differentiated.
    """

    def add(self, a: Any, b: Any) -> Any: ...

    def sub(self, a: Any, b: Any) -> Any: ...

    def mul(self, a: Any, b: Any) -> Any: ...

    def scale(self, a: Any, factor: float) -> Any: ...

    def squared_norm(self, a: Any) -> Any: ...

    def constant(self, value: Any) -> Any: ...

    def param(self, name: str) -> Any: ...
