"""Style registry with optional global-suffix dispatch.

A style name maps to a factory.  When a global suffix is active, a bare
name first tries its suffixed variant ("lj/cut" -> "lj/cut/opt") and falls
back to the base registration, so scripts opt into accelerated variants
wholesale without losing styles that have no such variant.  Explicitly
suffixed names always resolve to themselves.
"""

from __future__ import annotations

import difflib


class RegistryError(KeyError):
    def __str__(self):  # KeyError quotes its payload; keep the message readable
        return self.args[0] if self.args else ""


class StyleRegistry:
    def __init__(self):
        self._factories: dict[str, object] = {}

    def register(self, name: str, factory) -> None:
        if name in self._factories:
            raise RegistryError(f"style {name!r} already registered")
        self._factories[name] = factory

    def names(self) -> list[str]:
        return sorted(self._factories)

    def __contains__(self, name: str) -> bool:
        return name in self._factories

    def resolve(self, name: str, global_suffix: str | None = None):
        """Factory lookup: suffixed variant first, then the exact name.

        Resolution order with a global suffix s: (1) name + "/" + s if
        registered, (2) the name itself, (3) error listing near-matches.
        Without a suffix only step 2 applies.
        """
        if global_suffix:
            variant = f"{name}/{global_suffix}"
            if variant in self._factories:
                return self._factories[variant]
        if name in self._factories:
            return self._factories[name]
        near = difflib.get_close_matches(name, self._factories, n=3)
        hint = f"; near matches: {', '.join(near)}" if near else ""
        raise RegistryError(f"unknown style {name!r}{hint}")


def resolve_style(registry: StyleRegistry, name: str, global_suffix: str | None = None):
    return registry.resolve(name, global_suffix)
