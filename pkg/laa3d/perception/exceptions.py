"""perception で送出する例外

入力ファイルや設定の誤りは ``InputError`` (終了コード 2)、評価の前提条件を満たさない
場合は ``EvaluationError`` (終了コード 3) の派生クラスとして送出する。
"""

from __future__ import annotations


class PerceptionError(Exception):
    pass


# 入力エラー (exit 2)


class InputError(PerceptionError, ValueError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        location = ''
        if path is not None:
            location += f'{path}:'
        if line is not None:
            location += f'{line}:'
        super().__init__(f'{location} {message}' if location else message)


class SchemaError(ParseError):
    pass


class InvariantError(InputError):
    pass


class ScoreRangeError(ParseError):
    pass


class SpecError(InputError):
    pass


class DegenerateSpec(SpecError):
    pass


# 評価の前提条件エラー (exit 3)


class EvaluationError(PerceptionError):
    pass


class EmptyGroundTruth(EvaluationError):
    pass


class FrameRangeError(EvaluationError):
    pass


# 幾何・数値計算


class GeometryError(PerceptionError, ValueError):
    pass


class BehindCamera(GeometryError):
    pass


class FullyOutside(GeometryError):
    pass


class NonUnitEncoding(PerceptionError, ValueError):
    pass


class Infeasible(PerceptionError, ValueError):
    pass


class SingularInnovation(PerceptionError, ArithmeticError):
    pass


class InsufficientHistory(PerceptionError, ValueError):
    pass


class LengthMismatch(PerceptionError, ValueError):
    pass


class NonPositiveDepth(PerceptionError, ValueError):
    pass


class DepthOutOfRange(PerceptionError, ValueError):
    pass


class BinOutOfRange(PerceptionError, ValueError):
    pass
