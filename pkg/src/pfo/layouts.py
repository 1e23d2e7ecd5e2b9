"""Layout construction: assigning code and data to concrete pages.

Placement pragmas in the source pin functions and arrays to chosen pages
(including engineered straddles, via negative offsets measured from the
page end).  Everything unplaced gets fresh page-aligned space after the
pinned units, deterministically, so a program plus its pragmas fully
determines the geometry an adversary observes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .exectree import ExecutionTree, PAD_ORIGIN
from .ir import LoweredProgram, PAD_OBJECT
from .lang import Placement, Program, WORD_SIZE
from .memory import Extent, LayoutError, MemoryLayout, split_extents


def _pages_spanned(extents: tuple[Extent, ...]) -> int:
    return max(e.page for e in extents) + 1 if extents else 0


def _data_extent_map(
    program: Program,
    page_size: int,
    next_free: int,
    include_pad: bool,
    extra_arrays: dict[str, int] | None = None,
) -> tuple[dict[str, tuple[Extent, ...]], int]:
    placements = {p.name: p for p in program.placements if p.kind == "data"}
    data_map: dict[str, tuple[Extent, ...]] = {}
    arrays = {d.name: d.byte_length for d in program.arrays}
    if extra_arrays:
        arrays.update(extra_arrays)
    for name, byte_len in arrays.items():
        p = placements.get(name)
        if p is not None:
            data_map[name] = split_extents(page_size, p.page, p.offset, byte_len)
            next_free = max(next_free, _pages_spanned(data_map[name]))
    for name, byte_len in arrays.items():
        if name in data_map:
            continue
        data_map[name] = split_extents(page_size, next_free, 0, byte_len)
        next_free = _pages_spanned(data_map[name])
    if include_pad and PAD_OBJECT not in data_map:
        data_map[PAD_OBJECT] = split_extents(page_size, next_free, 0, WORD_SIZE)
        next_free += 1
    for extents in data_map.values():
        next_free = max(next_free, _pages_spanned(extents))
    return data_map, next_free


def build_ast_layout(lowered: LoweredProgram, page_size: int) -> MemoryLayout:
    """Vanilla layout for whole-function interpretation.

    Code units are functions; pinned functions start at their pragma page
    (offset honored), the rest get fresh pages in declaration order.
    """
    program = lowered.program
    placements = {p.name: p for p in program.placements if p.kind == "code"}
    lengths = lowered.code_lengths()
    code_map: dict[str, tuple[Extent, ...]] = {}
    next_free = 0
    for name, byte_len in lengths.items():
        p = placements.get(name)
        if p is not None and byte_len > 0:
            code_map[name] = split_extents(page_size, p.page, p.offset, byte_len)
            next_free = max(next_free, _pages_spanned(code_map[name]))
    for name, byte_len in lengths.items():
        if name in code_map or byte_len == 0:
            continue
        code_map[name] = split_extents(page_size, next_free, 0, byte_len)
        next_free = _pages_spanned(code_map[name])
    data_map, _ = _data_extent_map(program, page_size, next_free, include_pad=False)
    return MemoryLayout(page_size=page_size, code_map=code_map, data_map=data_map)


def build_tree_layout(tree: ExecutionTree, page_size: int) -> MemoryLayout:
    """Vanilla layout for tree execution.

    Blocks are grouped by origin function: a pinned origin's blocks pack
    sequentially from its pragma page, unpinned origins get fresh pages.
    Padding blocks group under their own page.
    """
    program = tree.program
    placements = {p.name: p for p in program.placements if p.kind == "code"}
    by_origin: dict[str, list] = {}
    for b in tree.blocks:
        by_origin.setdefault(b.origin or program.entry.name, []).append(b)

    code_map: dict[str, tuple[Extent, ...]] = {}
    next_free = 0

    def place_group(blocks, page: int, offset: int) -> int:
        cursor_page, cursor_off = page, offset
        for b in sorted(blocks, key=lambda b: b.id):
            size = max(b.code_size, WORD_SIZE)  # empty blocks still occupy a slot
            extents = split_extents(page_size, cursor_page, cursor_off, size)
            code_map[f"BB{b.id}"] = extents
            last = extents[-1]
            cursor_page = last.page
            cursor_off = last.offset + last.length
            if cursor_off >= page_size:
                cursor_page += 1
                cursor_off = 0
        return cursor_page + (1 if cursor_off else 0)

    pinned = [o for o in by_origin if o in placements]
    for origin in sorted(pinned, key=lambda o: placements[o].page):
        p = placements[origin]
        end = place_group(by_origin[origin], p.page, p.offset)
        next_free = max(next_free, end)
    for origin in sorted(o for o in by_origin if o not in placements):
        end = place_group(by_origin[origin], next_free, 0)
        next_free = end

    data_map, _ = _data_extent_map(program, page_size, next_free, include_pad=True)
    return MemoryLayout(page_size=page_size, code_map=code_map, data_map=data_map)


def next_free_page(layout: MemoryLayout) -> int:
    pages = layout.all_pages()
    return (max(pages) + 1) if pages else 0
