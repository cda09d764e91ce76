"""
Formatos em disco do toolkit: matrizes SRNF, contêiner SRNW, checkpoints SRNC
e manifestos TSV. Todos os inteiros e floats são little-endian.
"""
import csv
import logging
import os
import struct
import tempfile
from collections import OrderedDict
from contextlib import contextmanager
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from serenade import SRNC_VERSION, SRNF_VERSION, SRNW_VERSION
from serenade.pipeline.models.audio import F0Track
from serenade.pipeline.models.infill import CorpusRecord, CyclicRecord
from serenade.pipeline.models.synth import SongSpec
from serenade.pipeline.models.world import WorldFeatures
from serenade.pipeline.utils.errors import FormatError, MissingFileError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SRNF_MAGIC = b"SRNF"
SRNW_MAGIC = b"SRNW"
SRNC_MAGIC = b"SRNC"

MANIFEST_FIELDS = ("clip_id", "wav_path", "style", "song_id", "phrase_id")
CYCLIC_FIELDS = ("item_id", "source_clip_id", "reference_clip_id", "wav_path", "source_style", "reference_style")
SONG_FIELDS = ("song_id", "key_offset", "notes")


@contextmanager
def atomic_write(path: PathLike, mode: str = "wb") -> Iterator:
    """
    Abre um arquivo temporário no mesmo diretório e o renomeia sobre `path` ao final.

    Em caso de exceção o temporário é removido e o destino fica intacto.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    kwargs = {"encoding": "utf-8", "newline": ""} if "b" not in mode else {}
    try:
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require(path: PathLike) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"arquivo não encontrado: {path}")
    return path


def _read_exact(handle: BinaryIO, size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise FormatError(f"arquivo truncado ao ler {what}")
    return data


def _as_matrix(array: np.ndarray) -> np.ndarray:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise FormatError(f"somente matrizes 1-D ou 2-D são serializáveis, recebido ndim={arr.ndim}")
    return arr


def _write_payload(handle: BinaryIO, arr: np.ndarray) -> None:
    handle.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
    handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_payload(handle: BinaryIO, what: str) -> np.ndarray:
    rows, cols = struct.unpack("<II", _read_exact(handle, 8, f"dimensões de {what}"))
    raw = _read_exact(handle, rows * cols * 4, f"dados de {what}")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# SRNF: uma matriz
# ---------------------------------------------------------------------------

def write_srnf_block(handle: BinaryIO, array: np.ndarray) -> None:
    arr = _as_matrix(array)
    handle.write(SRNF_MAGIC)
    handle.write(struct.pack("<I", SRNF_VERSION))
    _write_payload(handle, arr)


def read_srnf_block(handle: BinaryIO) -> np.ndarray:
    magic = _read_exact(handle, 4, "assinatura SRNF")
    if magic != SRNF_MAGIC:
        raise FormatError(f"assinatura SRNF inválida: {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(handle, 4, "versão SRNF"))
    if version != SRNF_VERSION:
        raise FormatError(f"versão SRNF não suportada: {version}")
    return _read_payload(handle, "bloco SRNF")


def write_srnf(path: PathLike, array: np.ndarray) -> None:
    with atomic_write(path) as handle:
        write_srnf_block(handle, array)


def read_srnf(path: PathLike) -> np.ndarray:
    with open(_require(path), "rb") as handle:
        return read_srnf_block(handle)


# ---------------------------------------------------------------------------
# SRNW: f0, mcep e bap em três blocos SRNF
# ---------------------------------------------------------------------------

def write_world_features(path: PathLike, features: WorldFeatures) -> None:
    with atomic_write(path) as handle:
        handle.write(SRNW_MAGIC)
        handle.write(struct.pack("<I", SRNW_VERSION))
        write_srnf_block(handle, features.f0.values)
        write_srnf_block(handle, features.mcep)
        write_srnf_block(handle, features.bap)


def read_world_features(path: PathLike) -> WorldFeatures:
    with open(_require(path), "rb") as handle:
        magic = _read_exact(handle, 4, "assinatura SRNW")
        if magic != SRNW_MAGIC:
            raise FormatError(f"assinatura SRNW inválida: {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(handle, 4, "versão SRNW"))
        if version != SRNW_VERSION:
            raise FormatError(f"versão SRNW não suportada: {version}")
        f0 = read_srnf_block(handle)
        mcep = read_srnf_block(handle)
        bap = read_srnf_block(handle)
    try:
        return WorldFeatures(f0=F0Track(values=f0[:, 0]), mcep=mcep, bap=np.clip(bap, 0.0, 1.0))
    except ValidationError as e:
        raise FormatError(f"SRNW com conteúdo inválido: {path}", details=e.errors()) from e


# ---------------------------------------------------------------------------
# SRNC: blocos nomeados
# ---------------------------------------------------------------------------

def write_blocks(path: PathLike, blocks: "OrderedDict[str, np.ndarray]") -> None:
    """Grava blocos nomeados no formato SRNC, na ordem do dict."""
    with atomic_write(path) as handle:
        handle.write(SRNC_MAGIC)
        handle.write(struct.pack("<II", SRNC_VERSION, len(blocks)))
        for name, array in blocks.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise FormatError(f"nome de bloco longo demais: {name[:40]}...")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            _write_payload(handle, _as_matrix(array))


def read_blocks(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    blocks: "OrderedDict[str, np.ndarray]" = OrderedDict()
    with open(_require(path), "rb") as handle:
        magic = _read_exact(handle, 4, "assinatura SRNC")
        if magic != SRNC_MAGIC:
            raise FormatError(f"assinatura SRNC inválida: {magic!r}")
        version, count = struct.unpack("<II", _read_exact(handle, 8, "cabeçalho SRNC"))
        if version != SRNC_VERSION:
            raise FormatError(f"versão SRNC não suportada: {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(handle, 2, "tamanho do nome"))
            try:
                name = _read_exact(handle, name_len, "nome do bloco").decode("utf-8")
            except UnicodeDecodeError as e:
                raise FormatError("nome de bloco não é UTF-8 válido") from e
            blocks[name] = _read_payload(handle, name)
        if handle.read(1):
            raise FormatError("dados excedentes após o último bloco SRNC")
    return blocks


# ---------------------------------------------------------------------------
# Manifestos TSV
# ---------------------------------------------------------------------------

def _write_tsv(path: PathLike, rows: List[Tuple]) -> None:
    with atomic_write(path, "w") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        for row in rows:
            writer.writerow(row)


def _read_tsv(path: PathLike, fields: Tuple[str, ...]) -> List[Dict[str, str]]:
    records = []
    with open(_require(path), encoding="utf-8", newline="") as handle:
        for line_no, row in enumerate(csv.reader(handle, delimiter="\t"), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != len(fields):
                raise FormatError(f"{path}:{line_no}: esperado {len(fields)} campos, encontrado {len(row)}")
            records.append(dict(zip(fields, row)))
    return records


def _relative_wav(manifest: PathLike, wav_path: str) -> str:
    """Caminho do WAV relativo ao diretório do manifesto."""
    return os.path.relpath(Path(wav_path).resolve(), Path(manifest).resolve().parent)


def _rows(path: PathLike, records, fields: Tuple[str, ...]) -> List[Tuple]:
    rows = []
    for record in records:
        values = record.model_dump()
        values["wav_path"] = _relative_wav(path, values["wav_path"])
        rows.append(tuple(values[f] for f in fields))
    return rows


def write_manifest(path: PathLike, records: List[CorpusRecord]) -> None:
    _write_tsv(path, _rows(path, records, MANIFEST_FIELDS))


def read_manifest(path: PathLike) -> List[CorpusRecord]:
    """
    Lê o manifesto do corpus. Caminhos relativos de WAV são resolvidos
    a partir do diretório do manifesto.
    """
    base = Path(path).parent
    records = []
    for row in _read_tsv(path, MANIFEST_FIELDS):
        wav = Path(row["wav_path"])
        row["wav_path"] = str(wav if wav.is_absolute() else base / wav)
        try:
            records.append(CorpusRecord(**row))
        except ValidationError as e:
            raise FormatError(f"registro inválido em {path}: {row}", details=e.errors()) from e
    if not records:
        raise FormatError(f"manifesto vazio: {path}")
    return records


def write_cyclic_manifest(path: PathLike, records: List[CyclicRecord]) -> None:
    _write_tsv(path, _rows(path, records, CYCLIC_FIELDS))


def read_cyclic_manifest(path: PathLike) -> List[CyclicRecord]:
    base = Path(path).parent
    records = []
    for row in _read_tsv(path, CYCLIC_FIELDS):
        wav = Path(row["wav_path"])
        row["wav_path"] = str(wav if wav.is_absolute() else base / wav)
        try:
            records.append(CyclicRecord(**row))
        except ValidationError as e:
            raise FormatError(f"registro cíclico inválido em {path}: {row}", details=e.errors()) from e
    return records


def write_songs(path: PathLike, songs: Dict[str, SongSpec]) -> None:
    _write_tsv(path, [(song_id, str(spec.key_offset), spec.to_text()) for song_id, spec in songs.items()])


def read_songs(path: PathLike) -> Dict[str, SongSpec]:
    songs = {}
    for row in _read_tsv(path, SONG_FIELDS):
        try:
            songs[row["song_id"]] = SongSpec.from_text(row["notes"], key_offset=int(row["key_offset"]))
        except (ValueError, ValidationError) as e:
            raise FormatError(f"partitura inválida para {row['song_id']}") from e
    return songs
