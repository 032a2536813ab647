"""CSV report writers with a provenance comment header.

Every emitted file starts with a single comment line carrying the tool
version, the seed, and a hash of the resolved configuration, so a report
can always be traced back to the run that produced it.  Values are written
with shortest round-trip float formatting, which makes reruns with the
same configuration byte-identical.
"""

import hashlib
import json
from pathlib import Path

VERSION = "0.1.0"


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows, command, seed, cfg_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# propweight {VERSION} command={command} seed={seed} "
             f"config_sha256={cfg_hash}"]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path
