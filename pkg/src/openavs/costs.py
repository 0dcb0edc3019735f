"""Token and dollar accounting for chat calls, in exact decimal arithmetic."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from decimal import Decimal

from openavs.errors import UnknownModelError

# Published per-million-token rates for the hosted translator models.
DEFAULT_RATES = {
    "gpt-4o-mini": ("0.15", "0.60"),
    "gpt-4o": ("2.50", "10.00"),
    "gpt-4-turbo": ("10.00", "30.00"),
}

_ONE_MILLION = Decimal(1_000_000)


@dataclass(frozen=True)
class Price:
    """USD per one million input/output tokens."""

    input_per_1m: Decimal
    output_per_1m: Decimal

    def __post_init__(self):
        if self.input_per_1m < 0 or self.output_per_1m < 0:
            raise ValueError("rates must be nonnegative")


class PriceTable:
    """model_id -> Price; lookups of unknown models raise, never default to zero."""

    def __init__(self, rates: dict[str, Price] | None = None):
        self._rates: dict[str, Price] = dict(rates or {})

    @classmethod
    def default(cls) -> "PriceTable":
        return cls(
            {
                model: Price(Decimal(inp), Decimal(out))
                for model, (inp, out) in DEFAULT_RATES.items()
            }
        )

    def get(self, model_id: str) -> Price:
        try:
            return self._rates[model_id]
        except KeyError:
            raise UnknownModelError(f"no price configured for model {model_id!r}") from None

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._rates

    def set(self, model_id: str, input_per_1m, output_per_1m) -> None:
        # str() first so float literals in configs stay at their printed value
        self._rates[model_id] = Price(Decimal(str(input_per_1m)), Decimal(str(output_per_1m)))

    def with_free_models(self, model_ids) -> "PriceTable":
        """Copy with rate (0, 0) for any listed model not already priced.

        Self-hosted describer endpoints cost nothing; only translator models
        carry the published rates unless the config overrides them.
        """
        table = PriceTable(self._rates)
        for model_id in model_ids:
            if model_id not in table:
                table.set(model_id, Decimal(0), Decimal(0))
        return table

    def models(self) -> list[str]:
        return sorted(self._rates)

    def to_json(self) -> dict:
        return {
            model: {
                "input_per_1m": str(p.input_per_1m),
                "output_per_1m": str(p.output_per_1m),
            }
            for model, p in sorted(self._rates.items())
        }

    @classmethod
    def from_json(cls, payload: dict) -> "PriceTable":
        return cls(
            {
                model: Price(Decimal(str(v["input_per_1m"])), Decimal(str(v["output_per_1m"])))
                for model, v in payload.items()
            }
        )


def cost_usd(usage, prices: PriceTable) -> Decimal:
    """(prompt tokens x input rate + completion tokens x output rate) / 1M, exactly."""
    price = prices.get(usage.model_id)
    total = (
        Decimal(usage.prompt_tokens) * price.input_per_1m
        + Decimal(usage.completion_tokens) * price.output_per_1m
    )
    return total / _ONE_MILLION


@dataclass(frozen=True)
class LedgerRecord:
    video_id: str
    stage: str
    usage: "object"  # TokenUsage; kept untyped to avoid importing the transport layer


class Ledger:
    """Append-only usage log, safe for concurrent appends from clip workers."""

    def __init__(self):
        self._records: list[LedgerRecord] = []
        self._lock = threading.Lock()

    def record(self, video_id: str, stage: str, usage) -> None:
        with self._lock:
            self._records.append(LedgerRecord(video_id, stage, usage))

    def records(self) -> list[LedgerRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def total_usd(self, prices: PriceTable) -> Decimal:
        return sum((cost_usd(r.usage, prices) for r in self.records()), Decimal(0))

    def per_video_cost(self, prices: PriceTable) -> tuple[dict[str, Decimal], Decimal | None]:
        """Per-video USD sums plus the mean over videos (None for an empty ledger)."""
        by_video: dict[str, Decimal] = {}
        for r in self.records():
            by_video[r.video_id] = by_video.get(r.video_id, Decimal(0)) + cost_usd(
                r.usage, prices
            )
        if not by_video:
            return {}, None
        mean = sum(by_video.values(), Decimal(0)) / len(by_video)
        return by_video, mean

    def to_json(self, prices: PriceTable | None = None) -> dict:
        payload = {
            "records": [
                {
                    "video_id": r.video_id,
                    "stage": r.stage,
                    "model_id": r.usage.model_id,
                    "prompt_tokens": r.usage.prompt_tokens,
                    "completion_tokens": r.usage.completion_tokens,
                    "estimated": getattr(r.usage, "estimated", False),
                }
                for r in self.records()
            ]
        }
        if prices is not None:
            payload["prices"] = prices.to_json()
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> tuple["Ledger", PriceTable | None]:
        from openavs.clients import TokenUsage

        ledger = cls()
        for r in payload.get("records", []):
            ledger.record(
                r["video_id"],
                r["stage"],
                TokenUsage(
                    prompt_tokens=r["prompt_tokens"],
                    completion_tokens=r["completion_tokens"],
                    model_id=r["model_id"],
                    estimated=r.get("estimated", False),
                ),
            )
        prices = PriceTable.from_json(payload["prices"]) if "prices" in payload else None
        return ledger, prices


def format_usd(amount: Decimal, places: int = 6) -> str:
    return f"{amount:.{places}f}"
