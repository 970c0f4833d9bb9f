"""
Subcommands of the `recon` CLI.
Each module exposes NAME, HELP, configure(parser) and handle(args) -> exit code.
"""

from app.commands import evaluate, gen_scene, grad_check, render, train, vc_score

COMMANDS = [gen_scene, vc_score, train, render, evaluate, grad_check]

__all__ = ["COMMANDS"]
