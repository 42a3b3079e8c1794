# normunit/models/report.py
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from normunit.utils.errors import UsageError

REPORT_COLUMNS = ['system', 'target', 'corpus', 'bleu', 'uer', 'proxy_wer', 'samples', 'seed', 'note']


class EvalRow(BaseModel):
    """One system's scores on one corpus, always paired with the sample count."""

    model_config = ConfigDict(frozen=True, extra='forbid')

    system: str
    target: str
    corpus: str
    bleu: Optional[float] = None
    uer: Optional[float] = None
    proxy_wer: Optional[float] = None
    samples: int = Field(ge=0)
    seed: Optional[int] = None
    note: str = ''

    def to_dict(self):
        return self.model_dump()


class EvalReport(BaseModel):
    """Append-only collection of rows, stamped with the config fingerprint and seed set."""

    model_config = ConfigDict(extra='forbid')

    fingerprint: str
    seeds: List[int] = Field(default_factory=list)
    rows: List[EvalRow] = Field(default_factory=list)

    def append(self, row):
        if not isinstance(row, EvalRow):
            raise UsageError(f"EvalReport rows must be EvalRow, got {type(row).__name__}")
        self.rows = [*self.rows, row]
        return row

    def extend(self, rows):
        for row in rows:
            self.append(row)

    def rows_for(self, system):
        return [row for row in self.rows if row.system == system]

    def to_rows(self):
        return [row.to_dict() for row in self.rows]

    def to_dict(self):
        return {'fingerprint': self.fingerprint, 'seeds': list(self.seeds), 'rows': self.to_rows()}


class RunMetadata(BaseModel):
    """Structured companion to a report; carries no timestamps so reruns hash identically."""

    model_config = ConfigDict(extra='forbid')

    stage: str
    fingerprint: str
    seeds: List[int] = Field(default_factory=list)
    upstream: dict = Field(default_factory=dict)
    settings: dict = Field(default_factory=dict)
    results: dict = Field(default_factory=dict)

    def to_dict(self):
        return self.model_dump(mode='json')
