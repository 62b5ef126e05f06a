"""Pure-python FLAC reader and a small writer.

No codec library (libsndfile, ffmpeg, libFLAC) is assumed to exist on the
host, so the decoder is self-contained. It handles the standard feature
set produced by reference encoders: all block sizes, 8/16/24-bit PCM,
constant / verbatim / fixed / LPC subframes, rice residuals with escape
partitions, stereo decorrelation (left-side, right-side, mid-side), wasted
bits, and CRC-8/CRC-16 verification.

The writer emits a valid subset (independent channels, constant / verbatim
/ fixed-predictor subframes, single-partition rice residuals) and exists
so tests and the synthetic corpus can produce real .flac files.

Samples are exchanged as int32 arrays of shape (n_samples, n_channels).
"""

import hashlib

import numpy as np

from spoofdet.errors import UnreadableFile

_MAGIC = b"fLaC"

_BLOCK_SIZES = {
    1: 192, 2: 576, 3: 1152, 4: 2304, 5: 4608,
    8: 256, 9: 512, 10: 1024, 11: 2048, 12: 4096, 13: 8192, 14: 16384, 15: 32768,
}
_SAMPLE_RATES = {
    1: 88200, 2: 176400, 3: 192000, 4: 8000, 5: 16000, 6: 22050, 7: 24000,
    8: 32000, 9: 44100, 10: 48000, 11: 96000,
}
_SAMPLE_SIZES = {1: 8, 2: 12, 4: 16, 5: 20, 6: 24, 7: 32}

_FIXED_COEFS = {
    0: [],
    1: [1],
    2: [2, -1],
    3: [3, -3, 1],
    4: [4, -6, 4, -1],
}


def _make_crc_table(poly, width):
    table = []
    top = 1 << (width - 1)
    mask = (1 << width) - 1
    for byte in range(256):
        crc = byte << (width - 8)
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & mask if crc & top else (crc << 1) & mask
        table.append(crc)
    return table


_CRC8_TABLE = _make_crc_table(0x07, 8)
_CRC16_TABLE = _make_crc_table(0x8005, 16)


def _crc8(data):
    crc = 0
    for b in data:
        crc = _CRC8_TABLE[crc ^ b]
    return crc


def _crc16(data):
    crc = 0
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC16_TABLE[(crc >> 8) ^ b]
    return crc


class _BitReader:
    __slots__ = ("data", "pos", "acc", "nbits")

    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.acc = 0
        self.nbits = 0

    def read(self, n):
        while self.nbits < n:
            if self.pos >= len(self.data):
                raise UnreadableFile("unexpected end of FLAC stream")
            self.acc = (self.acc << 8) | self.data[self.pos]
            self.pos += 1
            self.nbits += 8
        self.nbits -= n
        val = self.acc >> self.nbits
        self.acc &= (1 << self.nbits) - 1
        return val

    def read_signed(self, n):
        v = self.read(n)
        return v - (1 << n) if v >> (n - 1) else v

    def read_unary(self):
        q = 0
        while True:
            if self.nbits == 0:
                if self.pos >= len(self.data):
                    raise UnreadableFile("unexpected end of FLAC stream")
                self.acc = self.data[self.pos]
                self.pos += 1
                self.nbits = 8
            if self.acc == 0:
                q += self.nbits
                self.nbits = 0
                continue
            top = self.acc.bit_length()
            q += self.nbits - top
            self.nbits = top - 1
            self.acc &= (1 << self.nbits) - 1
            return q

    def align(self):
        self.nbits -= self.nbits % 8

    @property
    def byte_pos(self):
        return self.pos - self.nbits // 8


class _BitWriter:
    __slots__ = ("buf", "acc", "nbits")

    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nbits = 0

    def write(self, n, value):
        self.acc = (self.acc << n) | (value & ((1 << n) - 1))
        self.nbits += n
        while self.nbits >= 8:
            self.nbits -= 8
            self.buf.append((self.acc >> self.nbits) & 0xFF)
        self.acc &= (1 << self.nbits) - 1

    def write_unary(self, q):
        while q >= 32:
            self.write(32, 0)
            q -= 32
        self.write(q + 1, 1)

    def align(self):
        if self.nbits:
            self.write(8 - self.nbits, 0)


def _read_utf8_number(br):
    first = br.read(8)
    if first < 0x80:
        return first
    n_extra = 0
    mask = 0x40
    while first & mask:
        n_extra += 1
        mask >>= 1
    if n_extra == 0 or n_extra > 6:
        raise UnreadableFile("bad UTF-8 coded number in frame header")
    val = first & (mask - 1)
    for _ in range(n_extra):
        b = br.read(8)
        if b & 0xC0 != 0x80:
            raise UnreadableFile("bad UTF-8 continuation in frame header")
        val = (val << 6) | (b & 0x3F)
    return val


def _write_utf8_number(bw, val):
    if val < 0x80:
        bw.write(8, val)
        return
    out = []
    n_extra = 1
    while val >= (1 << (6 * n_extra + (6 - n_extra))):
        n_extra += 1
    for _ in range(n_extra):
        out.append(0x80 | (val & 0x3F))
        val >>= 6
    lead = (0xFF << (7 - n_extra)) & 0xFF | val
    bw.write(8, lead)
    for b in reversed(out):
        bw.write(8, b)


def _decode_residual(br, blocksize, order):
    method = br.read(2)
    if method > 1:
        raise UnreadableFile("reserved residual coding method")
    param_bits = 4 + method
    escape = (1 << param_bits) - 1
    part_order = br.read(4)
    n_parts = 1 << part_order
    residual = []
    for p in range(n_parts):
        count = (blocksize >> part_order) - (order if p == 0 else 0)
        if count < 0:
            raise UnreadableFile("invalid residual partition")
        param = br.read(param_bits)
        if param == escape:
            nbits = br.read(5)
            if nbits == 0:
                residual.extend([0] * count)
            else:
                residual.extend(br.read_signed(nbits) for _ in range(count))
        else:
            for _ in range(count):
                q = br.read_unary()
                u = (q << param) | br.read(param)
                residual.append((u >> 1) ^ -(u & 1))
    return residual


def _decode_subframe(br, blocksize, bps):
    if br.read(1):
        raise UnreadableFile("invalid subframe padding bit")
    stype = br.read(6)
    wasted = 0
    if br.read(1):
        wasted = 1 + br.read_unary()
    bps -= wasted

    if stype == 0:
        samples = [br.read_signed(bps)] * blocksize
    elif stype == 1:
        samples = [br.read_signed(bps) for _ in range(blocksize)]
    elif 8 <= stype <= 12:
        order = stype - 8
        samples = [br.read_signed(bps) for _ in range(order)]
        residual = _decode_residual(br, blocksize, order)
        coefs = _FIXED_COEFS[order]
        for res in residual:
            pred = sum(c * samples[-1 - j] for j, c in enumerate(coefs))
            samples.append(pred + res)
    elif stype >= 32:
        order = (stype & 31) + 1
        samples = [br.read_signed(bps) for _ in range(order)]
        precision = br.read(4)
        if precision == 15:
            raise UnreadableFile("invalid LPC precision")
        precision += 1
        shift = br.read_signed(5)
        if shift < 0:
            raise UnreadableFile("negative LPC shift")
        coefs = [br.read_signed(precision) for _ in range(order)]
        residual = _decode_residual(br, blocksize, order)
        for res in residual:
            pred = sum(c * samples[-1 - j] for j, c in enumerate(coefs)) >> shift
            samples.append(pred + res)
    else:
        raise UnreadableFile(f"reserved subframe type {stype}")

    if wasted:
        samples = [s << wasted for s in samples]
    return samples


def _decode_frame(br, streaminfo):
    start = br.byte_pos
    sync = br.read(14)
    if sync != 0x3FFE:
        raise UnreadableFile("lost frame sync")
    if br.read(1):
        raise UnreadableFile("invalid frame reserved bit")
    br.read(1)  # blocking strategy; frame/sample number is not used here
    bs_code = br.read(4)
    sr_code = br.read(4)
    ch_code = br.read(4)
    ss_code = br.read(3)
    if br.read(1):
        raise UnreadableFile("invalid frame reserved bit")
    _read_utf8_number(br)

    if bs_code == 0:
        raise UnreadableFile("reserved block size code")
    elif bs_code == 6:
        blocksize = br.read(8) + 1
    elif bs_code == 7:
        blocksize = br.read(16) + 1
    else:
        blocksize = _BLOCK_SIZES[bs_code]

    if sr_code == 0:
        pass
    elif sr_code == 12:
        br.read(8)
    elif sr_code in (13, 14):
        br.read(16)
    elif sr_code == 15:
        raise UnreadableFile("invalid sample rate code")

    if ss_code == 0:
        bps = streaminfo["bits_per_sample"]
    elif ss_code in _SAMPLE_SIZES:
        bps = _SAMPLE_SIZES[ss_code]
    else:
        raise UnreadableFile("reserved sample size code")

    header_end = br.byte_pos
    if _crc8(br.data[start:header_end]) != br.read(8):
        raise UnreadableFile("frame header CRC mismatch")

    if ch_code <= 7:
        channels = [_decode_subframe(br, blocksize, bps) for _ in range(ch_code + 1)]
    elif ch_code == 8:  # left/side
        left = _decode_subframe(br, blocksize, bps)
        side = _decode_subframe(br, blocksize, bps + 1)
        channels = [left, [l - s for l, s in zip(left, side)]]
    elif ch_code == 9:  # right/side
        side = _decode_subframe(br, blocksize, bps + 1)
        right = _decode_subframe(br, blocksize, bps)
        channels = [[r + s for r, s in zip(right, side)], right]
    elif ch_code == 10:  # mid/side
        mid = _decode_subframe(br, blocksize, bps)
        side = _decode_subframe(br, blocksize, bps + 1)
        left = [((m << 1 | (s & 1)) + s) >> 1 for m, s in zip(mid, side)]
        right = [((m << 1 | (s & 1)) - s) >> 1 for m, s in zip(mid, side)]
        channels = [left, right]
    else:
        raise UnreadableFile("reserved channel assignment")

    br.align()
    if _crc16(br.data[start:br.byte_pos]) != br.read(16):
        raise UnreadableFile("frame CRC mismatch")
    return channels


def read(path):
    """Decode a FLAC file.

    Returns (samples, rate, bits_per_sample) where samples is an int32
    array of shape (n_samples, n_channels).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise UnreadableFile(f"{path}: not a FLAC stream")

    pos = 4
    streaminfo = None
    while True:
        if pos + 4 > len(data):
            raise UnreadableFile(f"{path}: truncated metadata")
        header = int.from_bytes(data[pos : pos + 4], "big")
        last = header >> 31
        btype = (header >> 24) & 0x7F
        length = header & 0xFFFFFF
        body = data[pos + 4 : pos + 4 + length]
        if btype == 0:
            if length != 34:
                raise UnreadableFile(f"{path}: bad STREAMINFO length")
            raw = int.from_bytes(body, "big")
            streaminfo = {
                "sample_rate": (raw >> (34 * 8 - 16 - 16 - 24 - 24 - 20)) & 0xFFFFF,
                "channels": ((raw >> (34 * 8 - 16 - 16 - 24 - 24 - 20 - 3)) & 0x7) + 1,
                "bits_per_sample": ((raw >> (34 * 8 - 16 - 16 - 24 - 24 - 20 - 3 - 5)) & 0x1F) + 1,
                "total_samples": (raw >> 128) & ((1 << 36) - 1),
            }
        pos += 4 + length
        if last:
            break
    if streaminfo is None:
        raise UnreadableFile(f"{path}: missing STREAMINFO")

    br = _BitReader(data)
    br.pos = pos
    chunks = []
    while br.byte_pos < len(data):
        chunks.append(_decode_frame(br, streaminfo))

    n_ch = streaminfo["channels"]
    if any(len(c) != n_ch for c in chunks):
        raise UnreadableFile(f"{path}: inconsistent channel count across frames")
    cols = [np.concatenate([np.asarray(c[i], dtype=np.int64) for c in chunks]) for i in range(n_ch)]
    samples = np.stack(cols, axis=1).astype(np.int32)
    total = streaminfo["total_samples"]
    if total and samples.shape[0] > total:
        samples = samples[:total]
    return samples, streaminfo["sample_rate"], streaminfo["bits_per_sample"]


def _best_fixed_order(x):
    best_order, best_cost = 0, None
    res = x
    for order in range(3):
        if order:
            res = np.diff(res)
        if len(res) == 0:
            break
        cost = int(np.abs(res).sum())
        if best_cost is None or cost < best_cost:
            best_order, best_cost = order, cost
    return best_order


def _write_residual(bw, residual):
    bw.write(2, 0)  # 4-bit rice parameters
    bw.write(4, 0)  # single partition
    mean = float(np.mean(np.abs(residual))) if len(residual) else 0.0
    param = 0
    while (1 << param) < mean + 1 and param < 14:
        param += 1
    bw.write(4, param)
    for v in residual:
        v = int(v)
        u = -2 * v - 1 if v < 0 else 2 * v
        bw.write_unary(u >> param)
        bw.write(param, u)


def _write_subframe(bw, x, bps):
    x = np.asarray(x, dtype=np.int64)
    bw.write(1, 0)
    if np.all(x == x[0]):
        bw.write(6, 0)
        bw.write(1, 0)
        bw.write(bps, int(x[0]))
        return
    order = _best_fixed_order(x)
    bw.write(6, 8 + order)
    bw.write(1, 0)
    for v in x[:order]:
        bw.write(bps, int(v))
    res = x.copy()
    for _ in range(order):
        res = np.diff(res)
    _write_residual(bw, res)


def write(path, samples, rate, bits_per_sample=16, block_size=4096):
    """Encode int PCM samples of shape (n, channels) as a FLAC file."""
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, n_ch = samples.shape
    lim = 1 << (bits_per_sample - 1)
    if samples.min() < -lim or samples.max() >= lim:
        raise ValueError("samples exceed the stated bit depth")

    md5 = hashlib.md5()
    width = bits_per_sample // 8
    inter = samples.astype("<i8").reshape(-1)
    frame_bytes = np.stack(
        [((inter >> (8 * i)) & 0xFF).astype(np.uint8) for i in range(width)], axis=1
    )
    md5.update(frame_bytes.tobytes())

    head = _BitWriter()
    head.write(16, block_size)  # min block size
    head.write(16, block_size)
    head.write(24, 0)
    head.write(24, 0)
    head.write(20, rate)
    head.write(3, n_ch - 1)
    head.write(5, bits_per_sample - 1)
    head.write(36, n)
    streaminfo = bytes(head.buf) + md5.digest()

    out = bytearray()
    out += _MAGIC
    out += (1 << 31 | 0 << 24 | len(streaminfo)).to_bytes(4, "big")
    out += streaminfo

    for fi, start in enumerate(range(0, n, block_size)):
        block = samples[start : start + block_size]
        bw = _BitWriter()
        bw.write(14, 0x3FFE)
        bw.write(1, 0)
        bw.write(1, 0)  # fixed block size stream
        bw.write(4, 7)  # explicit 16-bit block size
        bw.write(4, 0)  # sample rate from STREAMINFO
        bw.write(4, n_ch - 1)
        bw.write(3, {8: 1, 16: 4, 24: 6}[bits_per_sample])
        bw.write(1, 0)
        _write_utf8_number(bw, fi)
        bw.write(16, len(block) - 1)
        header = bytes(bw.buf)
        bw.write(8, _crc8(header))
        for ch in range(n_ch):
            _write_subframe(bw, block[:, ch], bits_per_sample)
        bw.align()
        frame = bytes(bw.buf)
        out += frame
        out += _crc16(frame).to_bytes(2, "big")

    with open(path, "wb") as fh:
        fh.write(out)
