"""Reading and writing panel files, imputation output and run configuration.

Panel files are UTF-8, comma separated, LF terminated, and start with a
version comment::

    # hotdeck-panel v1 sports=1-10
    subject_id,class_id,gender,week,pain,frequency,sports,counts
    s1,c1,F,8,none,3,1;2,2;1
    s1,c1,F,9,new,0,-,-

``NA`` marks a missing value and ``-`` an empty sport set (or empty counts);
an empty field is an error. Counts are aligned with the listed sports.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import fields, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

from .donors import MatchLadder, MatchPredicate, PredicateKind
from .engine import ProvenanceRow, ReplicateResult, RunConfig
from .frequency import FrequencyMethod
from .panel import PainLevel, PanelDataset, WeekRecord, validate_record

PANEL_VERSION = "hotdeck-panel v1"
IMPUTED_VERSION = "hotdeck-imputed v1"
PROVENANCE_VERSION = "hotdeck-provenance v1"
COLUMNS = ("subject_id", "class_id", "gender", "week", "pain", "frequency", "sports", "counts")
PROVENANCE_COLUMNS = (
    "imp", "variable", "subject_id", "week", "value", "rung", "rung_label",
    "donor_weeks", "fallbacks", "seed_key",
)
NA = "NA"
EMPTY = "-"


class ParseError(ValueError):
    def __init__(self, row: int, column: str, reason: str):
        self.row, self.column, self.reason = row, column, reason
        super().__init__(f"line {row}, column {column}: {reason}")


class ValidationError(ValueError):
    def __init__(self, row: int, constraint: str, detail: str = ""):
        self.row, self.constraint = row, constraint
        super().__init__(f"line {row}: {constraint}" + (f" ({detail})" if detail else ""))


class ConfigError(ValueError):
    pass


# -- panel files ------------------------------------------------------------

def _parse_codes(text: str) -> frozenset[int]:
    out: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        elif part:
            out.add(int(part))
    return frozenset(out)


def _format_codes(codes: Iterable[int]) -> str:
    codes = sorted(codes)
    if codes and codes == list(range(codes[0], codes[-1] + 1)):
        return f"{codes[0]}-{codes[-1]}"
    return ",".join(map(str, codes))


def _header_meta(line: str) -> dict[str, str]:
    meta = {}
    for tok in line.lstrip("#").split()[2:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
    return meta


def _int_list(text: str, row: int, column: str) -> list[int]:
    try:
        return [int(x) for x in text.split(";")]
    except ValueError:
        raise ParseError(row, column, f"expected ';'-joined integers, got {text!r}") from None


def _parse_row(cells: Sequence[str], row: int, offset: int = 0) -> WeekRecord:
    if len(cells) != len(COLUMNS) + offset:
        raise ParseError(row, "*", f"expected {len(COLUMNS) + offset} fields, got {len(cells)}")
    vals = dict(zip(COLUMNS, cells[offset:]))
    for col, v in vals.items():
        if v == "":
            raise ParseError(row, col, "empty field (use NA for missing)")
    try:
        week = int(vals["week"])
    except ValueError:
        raise ParseError(row, "week", f"not an integer: {vals['week']!r}") from None
    pain = None
    if vals["pain"] != NA:
        try:
            pain = PainLevel(vals["pain"])
        except ValueError:
            raise ParseError(row, "pain", f"expected none/new/old/NA, got {vals['pain']!r}") from None
    freq = None
    if vals["frequency"] != NA:
        try:
            freq = int(vals["frequency"])
        except ValueError:
            raise ParseError(row, "frequency", f"not an integer: {vals['frequency']!r}") from None
    sports_list = None
    if vals["sports"] == EMPTY:
        sports_list = []
    elif vals["sports"] != NA:
        sports_list = _int_list(vals["sports"], row, "sports")
        if len(set(sports_list)) != len(sports_list):
            raise ParseError(row, "sports", "repeated sport code")
    counts = None
    if vals["counts"] == EMPTY:
        counts = {}
    elif vals["counts"] != NA:
        clist = _int_list(vals["counts"], row, "counts")
        if sports_list is None:
            raise ValidationError(row, "structural", "counts given without sports")
        if len(clist) != len(sports_list):
            raise ParseError(row, "counts", "counts do not align with sports")
        counts = dict(zip(sports_list, clist))
    if counts == {} and sports_list is None:
        raise ValidationError(row, "structural", "counts given without sports")
    if sports_list is not None and freq is None:
        raise ValidationError(row, "structural", "sports given without frequency")
    return WeekRecord(
        vals["subject_id"], vals["class_id"], vals["gender"], week, pain, freq,
        None if sports_list is None else frozenset(sports_list), counts,
    )


def _read_lines(source) -> tuple[list[str], str]:
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines, text


def load_panel(source: str | os.PathLike | IO[str]) -> PanelDataset:
    """Parse and validate a panel file (path or text stream)."""
    lines, _ = _read_lines(source)
    meta: dict[str, str] = {}
    start = 0
    if lines and lines[0].startswith("#"):
        meta = _header_meta(lines[0])
        start = 1
    if start >= len(lines):
        raise ParseError(start + 1, "*", "missing header row")
    header = next(csv.reader([lines[start]]))
    offset = 1 if header and header[0] == "imp" else 0
    if tuple(header[offset:]) != COLUMNS:
        raise ParseError(start + 1, "*", f"header must be {','.join(COLUMNS)}")
    sport_codes = _parse_codes(meta["sports"]) if "sports" in meta else frozenset(range(1, 11))
    records, rows = [], {}
    seen: dict[str, tuple[str, str]] = {}
    for i, cells in enumerate(csv.reader(lines[start + 1:]), start=start + 2):
        rec = _parse_row(cells, i, offset)
        for v in validate_record(rec, sport_codes):
            raise ValidationError(i, v.code, v.detail)
        if rec.key in rows:
            raise ValidationError(i, "duplicate", f"subject {rec.subject_id} week {rec.week_index} repeated")
        prev = seen.setdefault(rec.subject_id, (rec.school_class_id, rec.gender))
        if prev != (rec.school_class_id, rec.gender):
            raise ValidationError(i, "roster", f"subject {rec.subject_id} changes class or gender")
        rows[rec.key] = i
        records.append(rec)
    return PanelDataset(records, sport_codes=sport_codes)


def _fmt_record(rec: WeekRecord) -> list[str]:
    sports = None if rec.sports is None else sorted(rec.sports)
    if sports is None:
        s_txt = NA
    else:
        s_txt = ";".join(map(str, sports)) if sports else EMPTY
    if rec.counts is None:
        c_txt = NA
    elif not rec.counts:
        c_txt = EMPTY
    else:
        order = sports if sports is not None else sorted(rec.counts)
        c_txt = ";".join(str(rec.counts[s]) for s in order)
    return [
        rec.subject_id, rec.school_class_id, rec.gender, str(rec.week_index),
        NA if rec.pain is None else rec.pain.value,
        NA if rec.frequency is None else str(rec.frequency),
        s_txt, c_txt,
    ]


def _write_rows(out: IO[str], comment: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    out.write(f"# {comment}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def dump_panel(dataset: PanelDataset) -> str:
    buf = io.StringIO()
    _write_rows(
        buf, f"{PANEL_VERSION} sports={_format_codes(dataset.sport_codes)}", COLUMNS,
        (_fmt_record(r) for r in dataset),
    )
    return buf.getvalue()


def save_panel(dataset: PanelDataset, path: str | os.PathLike) -> None:
    Path(path).write_text(dump_panel(dataset), encoding="utf-8", newline="")


def _fmt_provenance(row: ProvenanceRow) -> list[str]:
    return [
        str(row.replicate), row.variable, row.subject_id, str(row.week_index),
        row.value or EMPTY,
        NA if row.rung is None else str(row.rung),
        row.rung_label or NA,
        ";".join(map(str, row.donor_weeks)) or NA,
        ";".join(row.fallbacks) or EMPTY,
        row.seed_key,
    ]


def save_completed(results: Sequence[ReplicateResult], outdir: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``imputed.csv`` (long format with an ``imp`` column) and ``provenance.csv``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    codes = results[0].dataset.sport_codes if results else frozenset(range(1, 11))
    data_path, prov_path = outdir / "imputed.csv", outdir / "provenance.csv"
    with open(data_path, "w", encoding="utf-8", newline="") as f:
        _write_rows(
            f, f"{IMPUTED_VERSION} sports={_format_codes(codes)}", ("imp",) + COLUMNS,
            ([str(r.m)] + _fmt_record(rec) for r in results for rec in r.dataset),
        )
    with open(prov_path, "w", encoding="utf-8", newline="") as f:
        _write_rows(
            f, PROVENANCE_VERSION, PROVENANCE_COLUMNS,
            (_fmt_provenance(p) for r in results for p in r.provenance),
        )
    return data_path, prov_path


def load_completed(path: str | os.PathLike) -> dict[int, PanelDataset]:
    """Read ``imputed.csv`` back into one dataset per replicate."""
    lines, _ = _read_lines(path)
    if not lines or not lines[0].startswith("#"):
        raise ParseError(1, "*", "missing version comment")
    head = lines[:2]
    by_imp: dict[int, list[str]] = {}
    for i, cells in enumerate(csv.reader(lines[2:]), start=3):
        try:
            by_imp.setdefault(int(cells[0]), []).append(lines[i - 1])
        except (ValueError, IndexError):
            raise ParseError(i, "imp", "replicate index must be an integer") from None
    return {m: load_panel(io.StringIO("\n".join(head + rows) + "\n")) for m, rows in sorted(by_imp.items())}


def read_provenance(path: str | os.PathLike) -> list[dict[str, str]]:
    lines, _ = _read_lines(path)
    body = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(body))


# -- configuration ----------------------------------------------------------

def parse_kv(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"config line {n}: duplicate key {k!r}")
        out[k] = v
    return out


def parse_radii(text: str) -> tuple[float, ...]:
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        out.append(math.inf if tok in ("inf", "unbounded") else float(int(tok)))
    if not out:
        raise ConfigError("empty radius list")
    return tuple(out)


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _ladder(groups: str, radii: tuple[float, ...], match_pain: bool = False) -> MatchLadder:
    preds = []
    for name in groups.split(","):
        try:
            kind = PredicateKind(name.strip())
        except ValueError:
            raise ConfigError(f"unknown match predicate {name.strip()!r}") from None
        preds.append((MatchPredicate(kind, match_pain=match_pain), radii))
    return MatchLadder.from_groups(preds)


RUN_KEYS = {
    "M", "seed", "frequency_method", "abb", "chaining", "keep_multiplicity",
    "sport_match_pain", "median_exclude_self", "frequency_predicates", "frequency_radii",
    "sport_radii", "count_radii", "proportion_radius", "analyses", "workers",
}


def run_config_from_kv(kv: dict[str, str], strict: bool = True) -> tuple[RunConfig, int]:
    """Build a :class:`RunConfig` (and worker count) from parsed key/values."""
    if strict:
        unknown = set(kv) - RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        radii = {k: parse_radii(kv.get(f"{k}_radii", "7,12,25,inf")) for k in ("frequency", "sport", "count")}
        match_pain = parse_bool(kv.get("sport_match_pain", "false"))
        cfg = RunConfig(
            M=int(kv.get("M", 20)),
            master_seed=int(kv.get("seed", 0)),
            frequency_ladder=_ladder(
                kv.get("frequency_predicates", "exact_pain,any_pain,all_entries"), radii["frequency"]
            ),
            sport_ladder=_ladder("closest_frequency", radii["sport"], match_pain),
            count_ladder=_ladder("contains_any_sport", radii["count"]),
            frequency_method=FrequencyMethod(kv.get("frequency_method", "residual")),
            abb=parse_bool(kv.get("abb", "false")),
            chaining=parse_bool(kv.get("chaining", "true")),
            keep_multiplicity=parse_bool(kv.get("keep_multiplicity", "false")),
            median_exclude_self=parse_bool(kv.get("median_exclude_self", "false")),
            proportion_radius=parse_radii(kv.get("proportion_radius", "7"))[0],
            analyses=tuple(a.strip() for a in kv.get("analyses", "mean_frequency").split(",") if a.strip()),
        )
        workers = int(kv.get("workers", 1))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, workers


def load_run_config(path: str | os.PathLike | None) -> tuple[RunConfig, int]:
    if path is None:
        return RunConfig(), 1
    return run_config_from_kv(parse_kv(Path(path).read_text(encoding="utf-8")))


def _typed_update(obj, prefix: str, kv: dict[str, str]):
    changes = {}
    for f in fields(obj):
        key = f"{prefix}.{f.name}"
        if key not in kv:
            continue
        cur = getattr(obj, f.name)
        raw = kv[key]
        try:
            if isinstance(cur, bool):
                changes[f.name] = parse_bool(raw)
            elif isinstance(cur, int):
                changes[f.name] = int(raw)
            elif isinstance(cur, float):
                changes[f.name] = float(raw)
            elif isinstance(cur, tuple):
                changes[f.name] = tuple(x.strip() for x in raw.split(",") if x.strip())
            else:
                changes[f.name] = raw
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        return replace(obj, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path: str | os.PathLike):
    """Simulation scenario: run keys plus ``gen.*``, ``amp.*`` and ``sim.*``."""
    from .simulation import AmputationSpec, GeneratorConfig

    kv = parse_kv(Path(path).read_text(encoding="utf-8"))
    sim_keys = {"sim.n_sim", "sim.methods", "sim.estimand"}
    gen_keys = {f"gen.{f.name}" for f in fields(GeneratorConfig)}
    amp_keys = {f"amp.{f.name}" for f in fields(AmputationSpec)}
    unknown = set(kv) - RUN_KEYS - sim_keys - gen_keys - amp_keys
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    run_cfg, _ = run_config_from_kv({k: v for k, v in kv.items() if k in RUN_KEYS})
    gen = _typed_update(GeneratorConfig(), "gen", kv)
    amp = _typed_update(AmputationSpec(), "amp", kv)
    methods = tuple(m.strip() for m in kv.get("sim.methods", ",".join(
        ("CompleteCase", "MeanImputation", "LOCF", "HotDeckMI", "HotDeckMI_ABB"))).split(","))
    try:
        n_sim = int(kv.get("sim.n_sim", 200))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return {
        "generator": gen,
        "amputation": amp,
        "run_config": run_cfg,
        "methods": methods,
        "n_sim": n_sim,
        "estimand": kv.get("sim.estimand", "mean_frequency"),
        "seed": run_cfg.master_seed,
    }
