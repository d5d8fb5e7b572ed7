/** Event-feed parsing and pointer/keyboard translation.
 *
 * Pointer and keyboard input produce the same InterfaceEvent vocabulary
 * the gesture websocket speaks; the view reducer never sees raw DOM input.
 */

import type { InterfaceEvent, SonifyParams } from "./types.js";

/** Parse one `t<TAB>kind<TAB>magnitude` trace line. */
export function parseTraceLine(line: string): InterfaceEvent | null {
  const parts = line.trim().split("\t");
  if (parts.length !== 3) {
    return null;
  }
  const [t, kind, mag] = parts;
  const timestamp = Number(t);
  if (!Number.isFinite(timestamp)) {
    return null;
  }
  if (kind === "CursorMove" || kind === "Sonify") {
    const fields = mag.split(",").map(Number);
    if (fields.some((v) => !Number.isFinite(v))) {
      return null;
    }
    if (kind === "CursorMove") {
      return { kind, timestamp, magnitude: 0, x: fields[0], y: fields[1] };
    }
    return { kind, timestamp, magnitude: fields[0] ?? 0, x: fields[1], y: fields[2] };
  }
  const magnitude = Number(mag);
  return Number.isFinite(magnitude) ? { kind, timestamp, magnitude } : null;
}

export function sonifyParamsOf(ev: InterfaceEvent): SonifyParams | null {
  if (ev.kind !== "Sonify") {
    return null;
  }
  return { gain: ev.magnitude, pitch: ev.x ?? 0, texture: ev.y ?? 0 };
}

export interface PointerInput {
  type: "wheel" | "down" | "move" | "up" | "key";
  x?: number; // pixels within the viewport
  y?: number;
  deltaY?: number;
  key?: string;
  viewW: number;
  viewH: number;
  timestamp: number;
}

/** Translate a raw pointer/keyboard sample into interface events. */
export function translatePointer(input: PointerInput): InterfaceEvent[] {
  const t = input.timestamp;
  const cursor = (): InterfaceEvent => ({
    kind: "CursorMove",
    timestamp: t,
    magnitude: 0,
    x: (input.x ?? 0) / input.viewW,
    y: (input.y ?? 0) / input.viewH,
  });
  switch (input.type) {
    case "wheel":
      return [cursor(),
              { kind: (input.deltaY ?? 0) < 0 ? "ZoomIn" : "ZoomOut",
                timestamp: t, magnitude: 1 }];
    case "down":
      return [cursor(), { kind: "SelectDown", timestamp: t, magnitude: 1 }];
    case "move":
      return [cursor()];
    case "up":
      return [{ kind: "SelectUp", timestamp: t, magnitude: 1 }];
    case "key": {
      const map: Record<string, string> = {
        ArrowUp: "ScrollUp", ArrowDown: "ScrollDown",
        ArrowLeft: "AdvanceLeft", ArrowRight: "AdvanceRight",
        "+": "ZoomIn", "-": "ZoomOut", r: "Refresh",
      };
      const kind = map[input.key ?? ""];
      return kind ? [{ kind, timestamp: t, magnitude: 1 }] : [];
    }
    default:
      return [];
  }
}
