#!/usr/bin/env python3
"""Writes the binary fixtures in this directory from the documented container layouts."""
import json
import pathlib
import struct

HERE = pathlib.Path(__file__).resolve().parent


def container(magic, header, payload, version=1):
    text = header if isinstance(header, bytes) else json.dumps(header, separators=(",", ":")).encode()
    return magic + struct.pack("<II", version, len(text)) + text + payload


def write(name, data):
    (HERE / name).write_bytes(data)


ssfm_header = {
    "denoiser": {"layers": 2, "filters": 1, "kernel": 1},
    "unroll": {"iterations": 5, "lambda": 0.05, "cg_tol": 1e-06, "cg_max_iter": 20, "dc_gradient": "implicit"},
    "round": 3,
    "branch": "b",
}
# 2 -> 1 -> 2 channels, 1x1 kernels: 2 + 1 + 2 + 2 = 7 values
ssfm_values = [0.25 * i - 1.0 for i in range(7)]
ssfm_payload = struct.pack("<7f", *ssfm_values)

write("valid.ssfm", container(b"SSFM", ssfm_header, ssfm_payload))
write("bad_magic.ssfm", container(b"SSFX", ssfm_header, ssfm_payload))
write("bad_version.ssfm", container(b"SSFM", ssfm_header, ssfm_payload, version=2))
write("truncated.ssfm", container(b"SSFM", ssfm_header, ssfm_payload[:-2]))
write("trailing.ssfm", container(b"SSFM", ssfm_header, ssfm_payload + b"\0\0\0\0"))
write("bad_json.ssfm", container(b"SSFM", b'{"denoiser":', ssfm_payload))
write("unknown_key.ssfm", container(b"SSFM", dict(ssfm_header, extra=1), ssfm_payload))
write("short_header.ssfm", b"SSFM" + struct.pack("<I", 1) + b"\x40")

cimg_header = {"rows": 2, "cols": 3, "domain": "kspace"}
# interleaved re/im, row-major
cimg_values = [1.0, -1.0, 0.5, 0.0, -2.0, 0.25, 3.0, 1.5, 0.0, -0.5, 0.125, 4.0]
cimg_payload = struct.pack("<12f", *cimg_values)

write("valid.cimg", container(b"CIMG", cimg_header, cimg_payload))
write("bad_magic.cimg", container(b"CIMX", cimg_header, cimg_payload))
write("truncated.cimg", container(b"CIMG", cimg_header, cimg_payload[:-4]))
write("bad_domain.cimg", container(b"CIMG", dict(cimg_header, domain="fourier"), cimg_payload))
write("zero_rows.cimg", container(b"CIMG", dict(cimg_header, rows=0), b""))
