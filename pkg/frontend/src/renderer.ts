/** Two-layer renderer: WebGL point field for circles (cheap at 50k+),
 * a 2D canvas above it for sprite-sheet thumbnails and selection rings.
 */

import type { ViewportSample } from "./types.js";
import { layoutToScreen, type ViewState } from "./viewstate.js";

const VERTEX_SRC = `
attribute vec2 a_pos;
uniform vec2 u_center;
uniform float u_scale;
uniform vec2 u_view;
uniform float u_size;
void main() {
  vec2 px = (a_pos - u_center) / u_scale;
  vec2 clip = vec2(px.x / (u_view.x * 0.5), px.y / (u_view.y * 0.5));
  gl_Position = vec4(clip, 0.0, 1.0);
  gl_PointSize = u_size;
}`;

const FRAGMENT_SRC = `
precision mediump float;
uniform vec4 u_color;
void main() {
  vec2 d = gl_PointCoord - vec2(0.5);
  if (dot(d, d) > 0.25) discard;
  gl_FragColor = u_color;
}`;

export interface SpriteRef {
  image: HTMLImageElement;
  rect: [number, number, number, number];
}

export class Renderer {
  private gl: WebGLRenderingContext;
  private program: WebGLProgram;
  private buffer: WebGLBuffer;
  private circleCount = 0;
  private uniforms: Record<string, WebGLUniformLocation>;

  constructor(private glCanvas: HTMLCanvasElement,
              private thumbCanvas: HTMLCanvasElement) {
    const gl = glCanvas.getContext("webgl", { antialias: true });
    if (!gl) {
      throw new Error("WebGL is not available");
    }
    this.gl = gl;
    this.program = this.compile();
    this.buffer = gl.createBuffer()!;
    this.uniforms = {};
    for (const name of ["u_center", "u_scale", "u_view", "u_size", "u_color"]) {
      this.uniforms[name] = gl.getUniformLocation(this.program, name)!;
    }
  }

  private compile(): WebGLProgram {
    const gl = this.gl;
    const make = (type: number, src: string) => {
      const shader = gl.createShader(type)!;
      gl.shaderSource(shader, src);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, make(gl.VERTEX_SHADER, VERTEX_SRC));
    gl.attachShader(program, make(gl.FRAGMENT_SHADER, FRAGMENT_SRC));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "program link failed");
    }
    return program;
  }

  setCircles(circles: [number, number][]): void {
    const gl = this.gl;
    const data = new Float32Array(circles.length * 2);
    for (let i = 0; i < circles.length; i++) {
      data[2 * i] = circles[i][0];
      data[2 * i + 1] = circles[i][1];
    }
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffer);
    gl.bufferData(gl.ARRAY_BUFFER, data, gl.DYNAMIC_DRAW);
    this.circleCount = circles.length;
  }

  /** Thumbnail edge length in screen pixels for the current zoom. */
  thumbSizePx(zoom: number): number {
    return Math.min(28 * Math.pow(1.3, zoom), 120);
  }

  render(state: ViewState, zoom: number, samples: ViewportSample[],
         sprites: Map<string, SpriteRef>): void {
    const gl = this.gl;
    const w = this.glCanvas.width;
    const h = this.glCanvas.height;
    gl.viewport(0, 0, w, h);
    gl.clearColor(0.05, 0.06, 0.09, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT);

    if (this.circleCount > 0) {
      gl.useProgram(this.program);
      gl.bindBuffer(gl.ARRAY_BUFFER, this.buffer);
      const loc = gl.getAttribLocation(this.program, "a_pos");
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, 2, gl.FLOAT, false, 0, 0);
      gl.uniform2f(this.uniforms.u_center, state.centerX, state.centerY);
      gl.uniform1f(this.uniforms.u_scale, state.scale);
      gl.uniform2f(this.uniforms.u_view, state.viewW, state.viewH);
      gl.uniform1f(this.uniforms.u_size, Math.max(2, 5 - zoom * 0.4));
      gl.uniform4f(this.uniforms.u_color, 0.55, 0.65, 0.85, 0.9);
      gl.drawArrays(gl.POINTS, 0, this.circleCount);
    }

    const ctx = this.thumbCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.thumbCanvas.width, this.thumbCanvas.height);
    const size = this.thumbSizePx(zoom);
    for (const sample of samples) {
      const [sx, sy] = layoutToScreen(state, sample.x, sample.y);
      if (sx < -size || sy < -size || sx > state.viewW + size
          || sy > state.viewH + size) {
        continue;
      }
      const sprite = sprites.get(sample.id);
      if (sprite) {
        const [rx, ry, rw, rh] = sprite.rect;
        ctx.drawImage(sprite.image, rx, ry, rw, rh,
                      sx - size / 2, sy - size / 2, size, size);
        if (sample.id === state.selectedId) {
          ctx.strokeStyle = "#ffd166";
          ctx.lineWidth = 2;
          ctx.strokeRect(sx - size / 2, sy - size / 2, size, size);
        }
      } else {
        // sheet not loaded yet: placeholder dot slightly larger than circles
        ctx.fillStyle = "rgba(200, 210, 235, 0.8)";
        ctx.beginPath();
        ctx.arc(sx, sy, 3, 0, 2 * Math.PI);
        ctx.fill();
      }
    }
  }

  /** Nearest sample thumbnail within the pick radius, if any. */
  pick(state: ViewState, samples: ViewportSample[], px: number, py: number,
       radius: number): string | null {
    let best: string | null = null;
    let bestDist = radius;
    for (const sample of samples) {
      const [sx, sy] = layoutToScreen(state, sample.x, sample.y);
      const dist = Math.hypot(sx - px, sy - py);
      if (dist <= bestDist) {
        best = sample.id;
        bestDist = dist;
      }
    }
    return best;
  }
}
