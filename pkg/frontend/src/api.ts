import type { Stats, TilePayload, ViewportPayload } from "./types.js";
import type { Bounds } from "./viewstate.js";

export class Api {
  constructor(private base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) {
      throw new Error(`${path}: HTTP ${resp.status}`);
    }
    return resp.json() as Promise<T>;
  }

  stats(): Promise<Stats> {
    return this.getJson<Stats>("/api/stats");
  }

  viewport(rect: Bounds, zoom: number): Promise<ViewportPayload> {
    const q = `x0=${rect.x0}&y0=${rect.y0}&x1=${rect.x1}&y1=${rect.y1}&zoom=${zoom}`;
    return this.getJson<ViewportPayload>(`/api/viewport?${q}`);
  }

  tile(zoom: number, tx: number, ty: number): Promise<TilePayload> {
    return this.getJson<TilePayload>(`/api/tiles/${zoom}/${tx}/${ty}`);
  }

  object(id: string): Promise<Record<string, unknown>> {
    return this.getJson<Record<string, unknown>>(
      `/api/objects/${encodeURIComponent(id)}`);
  }

  spriteUrl(path: string): string {
    return this.base + path;
  }
}
