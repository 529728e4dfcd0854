#!/usr/bin/env python3
"""
Evaluation and failure-mode diagnostics for designed CDR sequences.

Sequence metrics: AAR, contact AAR, perplexity, liabilities.
Diversity metrics: effective vocabulary, n-gram coverage, frequency shifts.
Interface metrics: paratope-epitope pair correlation, positional recovery.
Structure metrics: Calpha RMSD, fnat, DockQ, epitope F1.

Predictions travel in a per-complex JSON dump shared by every method, so
outputs of external tools can be diagnosed the same way.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation
from scipy.special import log_softmax
from scipy.stats import entropy, pearsonr

from errors import NoContacts, PredictionFormatError
from structure_io import AA_INDEX, AMINO_ACIDS, NUM_AA, Complex, split_contact_positions

logger = logging.getLogger(__name__)

DEFAULT_LIABILITY_MOTIFS = ("NG", "NS", "NT", "DG", "DP", "M")
DEFAULT_BINS = 11
INTERFACE_CUTOFF = 10.0
DOCKQ_IRMSD_SCALE = 1.5
DOCKQ_LRMSD_SCALE = 8.5
TOP_NGRAMS = 20
SUMMARY_COLUMNS = ("AAR", "CAAR", "PPL", "RMSD", "fnat", "DockQ", "epitope_F1", "n_liab")


# --- Prediction dumps --------------------------------------------------------

@dataclass(frozen=True)
class PredictionRecord:
    id: str
    cdr: str
    predicted_seq: str
    logits: Optional[np.ndarray] = None  # (L, 20)
    cdr_coords: Optional[np.ndarray] = None  # (L, 3)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "cdr": self.cdr,
            "predicted_seq": self.predicted_seq,
            "per_position_logits": None if self.logits is None else np.asarray(self.logits).tolist(),
            "predicted_cdr_coords": None if self.cdr_coords is None else np.asarray(self.cdr_coords).tolist(),
        }


def write_prediction(record: PredictionRecord, out_dir: Path | str) -> Path:
    path = Path(out_dir) / f"{record.id}.{record.cdr}.json"
    with open(path, "w") as f:
        json.dump(record.to_json(), f)
    return path


def _parse_prediction(raw: dict, path: Path) -> PredictionRecord:
    for key in ("id", "cdr", "predicted_seq"):
        if not isinstance(raw.get(key), str):
            raise PredictionFormatError(str(path), f"missing or non-string field {key!r}")
    seq = raw["predicted_seq"]
    bad = [ch for ch in seq if ch not in AA_INDEX]
    if bad:
        raise PredictionFormatError(str(path), f"predicted_seq has non amino-acid letters {sorted(set(bad))}")
    logits = raw.get("per_position_logits")
    coords = raw.get("predicted_cdr_coords")
    if logits is not None:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (len(seq), NUM_AA):
            raise PredictionFormatError(str(path), f"logits shape {logits.shape}, expected ({len(seq)}, {NUM_AA})")
    if coords is not None:
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape != (len(seq), 3):
            raise PredictionFormatError(str(path), f"coords shape {coords.shape}, expected ({len(seq)}, 3)")
    return PredictionRecord(raw["id"], raw["cdr"], seq, logits, coords)


def load_predictions(pred_dir: Path | str) -> list[PredictionRecord]:
    """Read every *.json dump in a directory, sorted by file name."""
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise PredictionFormatError(str(pred_dir), "not a directory")
    records = []
    for path in sorted(pred_dir.glob("*.json")):
        try:
            with open(path) as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise PredictionFormatError(str(path), f"invalid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise PredictionFormatError(str(path), "expected a JSON object")
        records.append(_parse_prediction(raw, path))
    return records


# --- Sequence metrics --------------------------------------------------------

def aar(pred: str, true: str) -> float:
    if len(pred) != len(true):
        raise ValueError(f"length mismatch: predicted {len(pred)} vs native {len(true)}")
    if not true:
        return float("nan")
    return sum(a == b for a, b in zip(pred, true)) / len(true)


def caar(pred: str, true: str, contact_positions: Iterable[int]) -> Optional[float]:
    """AAR over CDR-relative contact positions; None when there are none."""
    positions = list(contact_positions)
    if not positions:
        return None
    return sum(pred[p] == true[p] for p in positions) / len(positions)


def perplexity(logits, targets) -> float:
    logits = np.asarray(logits, dtype=np.float64)[:, :NUM_AA]
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)[np.arange(len(targets)), targets]
    return float(np.exp(-np.mean(logp)))


def aa_frequencies(sequences: Iterable[str]) -> np.ndarray:
    counts = np.zeros(NUM_AA)
    for seq in sequences:
        for ch in seq:
            counts[AA_INDEX[ch]] += 1
    total = counts.sum()
    return counts / total if total else counts


def effective_vocabulary(sequences: Iterable[str]) -> float:
    """exp(Shannon entropy) of the pooled amino-acid distribution."""
    p = aa_frequencies(sequences)
    if not p.any():
        return float("nan")
    return float(np.exp(entropy(p)))


def per_position_frequencies(sequences: Sequence[str]) -> np.ndarray:
    """(max length, 20) matrix of per-position amino-acid distributions."""
    width = max((len(s) for s in sequences), default=0)
    counts = np.zeros((width, NUM_AA))
    for seq in sequences:
        for pos, ch in enumerate(seq):
            counts[pos, AA_INDEX[ch]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def count_liabilities(seq: str, motifs: Sequence[str] = DEFAULT_LIABILITY_MOTIFS, unpaired_cys: bool = True) -> int:
    """Overlapping motif matches plus one when the cysteine count is odd."""
    total = sum(len(re.findall(f"(?={re.escape(m)})", seq)) for m in motifs)
    if unpaired_cys and seq.count("C") % 2 == 1:
        total += 1
    return total


def _ngrams(seq: str, n: int) -> list[str]:
    return [seq[i:i + n] for i in range(len(seq) - n + 1)]


def ngram_coverage(pred: Sequence[str], true: Sequence[str], n: int, top_k: int = TOP_NGRAMS) -> dict:
    pred_counts = Counter(g for s in pred for g in _ngrams(s, n))
    true_counts = Counter(g for s in true for g in _ngrams(s, n))
    top = [g for g, _ in sorted(true_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]]
    covered = sum(g in pred_counts for g in top)
    return {
        "n": n,
        "unique_pred": len(pred_counts),
        "unique_true": len(true_counts),
        "top_k": len(top),
        "top_covered": covered,
        "top_overlap": covered / len(top) if top else float("nan"),
    }


def diversity_recovery(pred: Sequence[str], true: Sequence[str]) -> float:
    return effective_vocabulary(pred) / effective_vocabulary(true)


def aa_frequency_shift(pred: Sequence[str], true: Sequence[str]) -> np.ndarray:
    """pred_freq / native_freq - 1 per amino acid; NaN where the native frequency is 0."""
    p, q = aa_frequencies(pred), aa_frequencies(true)
    return np.divide(p, q, out=np.full(NUM_AA, np.nan), where=q > 0) - 1.0


# --- Interface statistics ----------------------------------------------------

def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        logger.warning("Correlation undefined for a constant input; reporting NaN")
        return float("nan")
    return float(pearsonr(a, b)[0])


def native_contact_pairs(c: Complex, cdr: str, d_c: float) -> list[tuple[int, int]]:
    """(CDR-relative position, antigen index) pairs with Calpha distance < d_c."""
    cdr_ca, antigen_ca = c.cdr_ca(cdr), c.antigen_ca()
    if len(cdr_ca) == 0 or len(antigen_ca) == 0:
        return []
    rows, cols = np.nonzero(cdist(cdr_ca, antigen_ca) < d_c)
    return list(zip(rows.tolist(), cols.tolist()))


def binding_pair_correlation(
    items: Sequence[tuple[Complex, str, str]], d_c: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """
    items are (complex, cdr, predicted sequence). Returns normalized 20x20
    (paratope aa, epitope aa) matrices for prediction and native, and the
    Pearson r over all 400 entries.
    """
    pred_m = np.zeros((NUM_AA, NUM_AA))
    true_m = np.zeros((NUM_AA, NUM_AA))
    for c, cdr, pred in items:
        native = c.cdr_sequence(cdr)
        for k, j in native_contact_pairs(c, cdr, d_c):
            ag = c.antigen[j].aa
            if ag >= NUM_AA:
                continue
            pred_m[AA_INDEX[pred[k]], ag] += 1
            true_m[AA_INDEX[native[k]], ag] += 1
    if true_m.sum() == 0:
        raise NoContacts(f"no CDR-antigen contacts within {d_c} A in {len(items)} complexes")
    pred_m /= pred_m.sum()
    true_m /= true_m.sum()
    return pred_m, true_m, _pearson(pred_m, true_m)


def positional_aar(pairs: Sequence[tuple[str, str]], bins: int = DEFAULT_BINS) -> np.ndarray:
    """Per-bin recovery along the CDR; position p of L maps to p/(L-1), length 1 to the middle bin."""
    hits = np.zeros(bins)
    totals = np.zeros(bins)
    for pred, true in pairs:
        length = len(true)
        for p in range(length):
            u = p / (length - 1) if length > 1 else 0.5
            b = min(int(u * bins), bins - 1)
            totals[b] += 1
            hits[b] += pred[p] == true[p]
    return np.divide(hits, totals, out=np.full(bins, np.nan), where=totals > 0)


def contact_gap(items: Sequence[tuple[Complex, str, str]], d_c: float) -> dict:
    """Recovery at antigen-contacting vs non-contacting CDR positions."""
    hit = {"contact": [0, 0], "noncontact": [0, 0]}
    for c, cdr, pred in items:
        start = c.cdr_ranges[cdr][0]
        native = c.cdr_sequence(cdr)
        contact, non_contact = split_contact_positions(c, d_c, cdr)
        for key, positions in (("contact", contact), ("noncontact", non_contact)):
            for idx in positions:
                p = idx - start
                hit[key][0] += pred[p] == native[p]
                hit[key][1] += 1
    rates = {k: (v[0] / v[1] if v[1] else float("nan")) for k, v in hit.items()}
    return {"aar_contact": rates["contact"], "aar_noncontact": rates["noncontact"],
            "gap": rates["noncontact"] - rates["contact"]}


def interface_enrichment_correlation(items: Sequence[tuple[Complex, str, str]], d_c: float) -> float:
    """Pearson r of predicted vs native amino-acid marginals at contact positions."""
    pred_letters, true_letters = [], []
    for c, cdr, pred in items:
        start = c.cdr_ranges[cdr][0]
        native = c.cdr_sequence(cdr)
        for idx in split_contact_positions(c, d_c, cdr)[0]:
            pred_letters.append(pred[idx - start])
            true_letters.append(native[idx - start])
    if not true_letters:
        return float("nan")
    return _pearson(aa_frequencies(pred_letters), aa_frequencies(true_letters))


# --- Structure metrics -------------------------------------------------------

def rmsd(pred: np.ndarray, true: np.ndarray) -> float:
    pred, true = np.asarray(pred, float), np.asarray(true, float)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return float(np.sqrt(np.mean(np.sum((pred - true) ** 2, axis=-1))))


def kabsch_rmsd(pred: np.ndarray, true: np.ndarray) -> float:
    """RMSD after optimal rigid superposition of pred onto true."""
    p = np.asarray(pred, float) - np.mean(pred, axis=0)
    t = np.asarray(true, float) - np.mean(true, axis=0)
    if len(p) < 2:
        return 0.0
    rotation, _ = Rotation.align_vectors(t, p)
    return rmsd(rotation.apply(p), t)


def contact_set(cdr_ca: np.ndarray, antigen_ca: np.ndarray, d_c: float) -> set[tuple[int, int]]:
    if len(cdr_ca) == 0 or len(antigen_ca) == 0:
        return set()
    rows, cols = np.nonzero(cdist(cdr_ca, antigen_ca) < d_c)
    return set(zip(rows.tolist(), cols.tolist()))


def fnat(pred_cdr_ca: np.ndarray, true_cdr_ca: np.ndarray, antigen_ca: np.ndarray, d_c: float) -> float:
    native = contact_set(true_cdr_ca, antigen_ca, d_c)
    if not native:
        return float("nan")
    return len(native & contact_set(pred_cdr_ca, antigen_ca, d_c)) / len(native)


def dockq(pred_cdr_ca: np.ndarray, true_cdr_ca: np.ndarray, antigen_ca: np.ndarray, d_c: float,
          interface_cutoff: float = INTERFACE_CUTOFF) -> float:
    """
    DockQ with the framework held fixed: LRMSD is the direct CDR RMSD and
    iRMSD superposes native interface residues (within interface_cutoff of
    the partner). NaN when the native complex has no interface.
    """
    f = fnat(pred_cdr_ca, true_cdr_ca, antigen_ca, d_c)
    close = cdist(true_cdr_ca, antigen_ca) < interface_cutoff if len(antigen_ca) else np.zeros((len(true_cdr_ca), 0), bool)
    cdr_iface = np.flatnonzero(close.any(axis=1))
    ag_iface = np.flatnonzero(close.any(axis=0))
    if math.isnan(f) or len(cdr_iface) == 0:
        return float("nan")
    pred_iface = np.concatenate([pred_cdr_ca[cdr_iface], antigen_ca[ag_iface]])
    true_iface = np.concatenate([true_cdr_ca[cdr_iface], antigen_ca[ag_iface]])
    irms = kabsch_rmsd(pred_iface, true_iface)
    lrms = rmsd(pred_cdr_ca, true_cdr_ca)
    return (f + 1.0 / (1.0 + (irms / DOCKQ_IRMSD_SCALE) ** 2) + 1.0 / (1.0 + (lrms / DOCKQ_LRMSD_SCALE) ** 2)) / 3.0


def epitope_f1(pred_cdr_ca: np.ndarray, antigen_ca: np.ndarray, true_epitope: Iterable[int], d_c: float) -> float:
    predicted = {j for _, j in contact_set(pred_cdr_ca, antigen_ca, d_c)}
    truth = set(true_epitope)
    if not predicted and not truth:
        return 1.0
    overlap = len(predicted & truth)
    if overlap == 0:
        return 0.0
    precision, recall = overlap / len(predicted), overlap / len(truth)
    return 2 * precision * recall / (precision + recall)


# --- Report ------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    method: str
    per_complex: pd.DataFrame
    summary: dict  # metric -> {"mean", "std", "n"}
    v_eff: float
    v_eff_native: float
    diversity_recovery: float
    aa_frequency: np.ndarray
    aa_frequency_native: np.ndarray
    aa_frequency_shift: np.ndarray
    per_position_freq: np.ndarray
    per_position_freq_native: np.ndarray
    pair_freq: Optional[np.ndarray]
    pair_freq_native: Optional[np.ndarray]
    pair_correlation: float
    interface_enrichment_r: float
    contact_gap: dict
    positional_aar: np.ndarray
    ngrams: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def summary_row(self) -> dict:
        row = {"method": self.method}
        for col in SUMMARY_COLUMNS:
            stats = self.summary.get(col, {"mean": float("nan"), "std": float("nan")})
            row[col] = f"{stats['mean']:.3f} ± {stats['std']:.3f}"
            row[f"{col}_mean"] = stats["mean"]
            row[f"{col}_std"] = stats["std"]
        return row

    def to_json(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return [clean(v) for v in x.tolist()]
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, float) and math.isnan(x):
                return None
            return x

        return clean({
            "method": self.method,
            "summary": self.summary,
            "v_eff": self.v_eff,
            "v_eff_native": self.v_eff_native,
            "diversity_recovery": self.diversity_recovery,
            "aa_frequency": dict(zip(AMINO_ACIDS, self.aa_frequency.tolist())),
            "aa_frequency_native": dict(zip(AMINO_ACIDS, self.aa_frequency_native.tolist())),
            "aa_frequency_shift": dict(zip(AMINO_ACIDS, self.aa_frequency_shift.tolist())),
            "pair_correlation": self.pair_correlation,
            "interface_enrichment_r": self.interface_enrichment_r,
            "contact_gap": self.contact_gap,
            "positional_aar": self.positional_aar,
            "ngrams": self.ngrams,
            "flags": self.flags,
            "per_complex": self.per_complex.to_dict(orient="records"),
        })


def _summarize(values: Sequence[Optional[float]]) -> dict:
    arr = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0)), "n": int(arr.size)}


def evaluate_predictions(
    predictions: Sequence[PredictionRecord],
    complexes: Mapping[str, Complex],
    d_c: float,
    method: str = "evostruct",
    motifs: Sequence[str] = DEFAULT_LIABILITY_MOTIFS,
    bins: int = DEFAULT_BINS,
) -> DiagnosticsReport:
    """Score predictions against the native complexes they name."""
    flags: list[str] = []
    rows = []
    items: list[tuple[Complex, str, str]] = []
    for rec in predictions:
        if rec.id not in complexes:
            raise PredictionFormatError(rec.id, "prediction for a complex missing from the manifest")
        c = complexes[rec.id]
        native = c.cdr_sequence(rec.cdr)
        if len(rec.predicted_seq) != len(native):
            raise PredictionFormatError(rec.id, f"predicted length {len(rec.predicted_seq)} != native {len(native)}")
        items.append((c, rec.cdr, rec.predicted_seq))
        start = c.cdr_ranges[rec.cdr][0]
        contacts = [i - start for i in split_contact_positions(c, d_c, rec.cdr)[0]]
        row = {
            "id": rec.id,
            "cdr": rec.cdr,
            "predicted_seq": rec.predicted_seq,
            "native_seq": native,
            "AAR": aar(rec.predicted_seq, native),
            "CAAR": caar(rec.predicted_seq, native, contacts),
            "n_liab": count_liabilities(rec.predicted_seq, motifs),
            "PPL": None,
            "RMSD": None,
            "fnat": None,
            "DockQ": None,
            "epitope_F1": None,
        }
        if row["CAAR"] is None:
            flags.append(f"{rec.id}: no contact positions, excluded from CAAR")
        if rec.logits is not None:
            row["PPL"] = perplexity(rec.logits, [AA_INDEX[ch] for ch in native])
        if rec.cdr_coords is not None:
            true_ca, antigen_ca = c.cdr_ca(rec.cdr), c.antigen_ca()
            row["RMSD"] = rmsd(rec.cdr_coords, true_ca)
            row["fnat"] = fnat(rec.cdr_coords, true_ca, antigen_ca, d_c)
            row["DockQ"] = dockq(rec.cdr_coords, true_ca, antigen_ca, d_c)
            row["epitope_F1"] = epitope_f1(rec.cdr_coords, antigen_ca, c.epitope, d_c)
        rows.append(row)

    per_complex = pd.DataFrame(rows)
    summary = {col: _summarize(per_complex[col].tolist() if len(per_complex) else []) for col in SUMMARY_COLUMNS}

    pred_seqs = [p for _, _, p in items]
    true_seqs = [c.cdr_sequence(cdr) for c, cdr, _ in items]
    try:
        pair_pred, pair_true, pair_r = binding_pair_correlation(items, d_c)
    except NoContacts as e:
        logger.warning(str(e))
        flags.append(str(e))
        pair_pred, pair_true, pair_r = None, None, float("nan")

    return DiagnosticsReport(
        method=method,
        per_complex=per_complex,
        summary=summary,
        v_eff=effective_vocabulary(pred_seqs),
        v_eff_native=effective_vocabulary(true_seqs),
        diversity_recovery=diversity_recovery(pred_seqs, true_seqs) if items else float("nan"),
        aa_frequency=aa_frequencies(pred_seqs),
        aa_frequency_native=aa_frequencies(true_seqs),
        aa_frequency_shift=aa_frequency_shift(pred_seqs, true_seqs),
        per_position_freq=per_position_frequencies(pred_seqs),
        per_position_freq_native=per_position_frequencies(true_seqs),
        pair_freq=pair_pred,
        pair_freq_native=pair_true,
        pair_correlation=pair_r,
        interface_enrichment_r=interface_enrichment_correlation(items, d_c),
        contact_gap=contact_gap(items, d_c),
        positional_aar=positional_aar(list(zip(pred_seqs, true_seqs)), bins),
        ngrams=[ngram_coverage(pred_seqs, true_seqs, n) for n in (2, 3)],
        flags=flags,
    )


def _aa_frame(matrix: np.ndarray, index_name: str, index=None) -> pd.DataFrame:
    frame = pd.DataFrame(matrix, columns=list(AMINO_ACIDS), index=index)
    frame.index.name = index_name
    return frame


def write_report(report: DiagnosticsReport, out_dir: Path | str) -> Path:
    """Write report.json plus the CSV tables behind the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        json.dump(report.to_json(), f, indent=2, sort_keys=True)
    pd.DataFrame([report.summary_row()]).to_csv(out / "summary.csv", index=False)
    report.per_complex.to_csv(out / "per_complex.csv", index=False)
    pd.DataFrame({
        "aa": list(AMINO_ACIDS),
        "predicted": report.aa_frequency,
        "native": report.aa_frequency_native,
        "shift": report.aa_frequency_shift,
    }).to_csv(out / "aa_frequency.csv", index=False)
    _aa_frame(report.per_position_freq, "position").to_csv(out / "position_freq_pred.csv")
    _aa_frame(report.per_position_freq_native, "position").to_csv(out / "position_freq_native.csv")
    if report.pair_freq is not None:
        _aa_frame(report.pair_freq, "paratope_aa", list(AMINO_ACIDS)).to_csv(out / "pair_freq_pred.csv")
        _aa_frame(report.pair_freq_native, "paratope_aa", list(AMINO_ACIDS)).to_csv(out / "pair_freq_native.csv")
    pd.DataFrame({"bin": np.arange(len(report.positional_aar)), "aar": report.positional_aar}).to_csv(
        out / "positional_aar.csv", index=False)
    pd.DataFrame(report.ngrams).to_csv(out / "ngram_coverage.csv", index=False)
    pd.DataFrame([{
        "method": report.method,
        "v_eff": report.v_eff,
        "v_eff_native": report.v_eff_native,
        "diversity_recovery": report.diversity_recovery,
        "pair_correlation": report.pair_correlation,
        "interface_enrichment_r": report.interface_enrichment_r,
        **report.contact_gap,
    }]).to_csv(out / "failure_modes.csv", index=False)
    logger.info(f"Wrote diagnostics for {report.method} ({len(report.per_complex)} complexes) to {out}")
    return out


def comparison_table(reports: Sequence[DiagnosticsReport]) -> pd.DataFrame:
    """One row per method: summary columns plus the diversity and interface readouts."""
    rows = []
    for r in reports:
        row = r.summary_row()
        row.update({"V_eff": r.v_eff, "pair_r": r.pair_correlation, "diversity_recovery": r.diversity_recovery,
                    "contact_gap": r.contact_gap["gap"]})
        rows.append(row)
    return pd.DataFrame(rows)
