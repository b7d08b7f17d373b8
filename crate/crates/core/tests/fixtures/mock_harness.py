"""Scripted stand-in for the Python harness: one JSON document per line in,
one per line out. Behaviour is keyed on words in the program text."""

import json
import os
import sys


def execute(program):
    if "CRASH" in program:
        return {"status": "crash", "signal_name": "SIGSEGV", "exit_code": -11, "stdout": "", "stderr": ""}
    if "SLEEP" in program:
        return {"status": "timeout", "exit_code": -9, "stdout": "partial\n", "wall_time_seconds": 1.0}
    if "FAIL" in program:
        return {"status": "error", "error": "SyntaxError: invalid syntax"}
    out = "pid %d\n" % os.getpid()
    out += "echo %s\n" % program.splitlines()[-1]
    if "fire" in program:
        out += "BUG FOUND\n"
    return {
        "status": "ok",
        "exit_code": 0,
        "stdout": out,
        "stderr": "",
        "bug_found": "fire" in program,
        "trace": [{"site_kind": "call_chain_step", "expression_text": "lib.f(x)", "value_repr": "tensor([1.])"}],
        "wall_time_seconds": 0.01,
    }


def handle(req):
    action = req["action"]
    if action == "catalog":
        lib = req["library_ref"]
        return {
            "status": "ok",
            "apis": [
                {"qualified_name": lib + ".add", "module_path": lib,
                 "signature_params": [{"name": "input", "kind": "positional_or_keyword", "has_default": False},
                                      {"name": "alpha", "kind": "keyword_only", "has_default": True}],
                 "doc_text": "Adds."},
                {"qualified_name": lib + ".nn.relu", "module_path": lib + ".nn"},
            ],
        }
    if action == "instrument":
        return {"status": "ok", "program": "# traced\n" + req["program"]}
    return execute(req["program"])


for line in sys.stdin:
    req = json.loads(line)
    program = req.get("program") or ""
    if "GARBAGE" in program:
        print("this is not json", flush=True)
        continue
    if "DIE" in program:
        sys.exit(3)
    print(json.dumps(handle(req)), flush=True)
