/** Minimal WebGL2 flat-shaded triangle renderer; no runtime dependencies.
 * Faces are expanded to non-indexed triangles each frame so per-face normals
 * follow the deforming positions.
 */

const VS = `#version 300 es
in vec3 a_position;
in vec3 a_normal;
uniform mat4 u_viewProj;
out vec3 v_normal;
out vec3 v_world;
void main() {
  v_normal = a_normal;
  v_world = a_position;
  gl_Position = u_viewProj * vec4(a_position, 1.0);
}`;

const FS = `#version 300 es
precision highp float;
in vec3 v_normal;
in vec3 v_world;
uniform vec3 u_eye;
out vec4 outColor;
void main() {
  vec3 n = normalize(v_normal);
  vec3 l = normalize(vec3(0.4, 0.6, 1.0));
  vec3 v = normalize(u_eye - v_world);
  if (dot(n, v) < 0.0) n = -n;
  float diff = max(dot(n, l), 0.0);
  vec3 base = vec3(0.42, 0.62, 0.85);
  vec3 c = base * (0.25 + 0.65 * diff) + vec3(0.1) * pow(max(dot(reflect(-l, n), v), 0.0), 24.0);
  outColor = vec4(c, 1.0);
}`;

function compile(gl: WebGL2RenderingContext, kind: number, src: string): WebGLShader {
  const sh = gl.createShader(kind)!;
  gl.shaderSource(sh, src);
  gl.compileShader(sh);
  if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
    throw new Error(`shader compile failed: ${gl.getShaderInfoLog(sh)}`);
  }
  return sh;
}

export class MeshRenderer {
  private program: WebGLProgram;
  private posBuf: WebGLBuffer;
  private nrmBuf: WebGLBuffer;
  private vao: WebGLVertexArrayObject;
  private uViewProj: WebGLUniformLocation;
  private uEye: WebGLUniformLocation;
  private expandedPos: Float32Array = new Float32Array(0);
  private expandedNrm: Float32Array = new Float32Array(0);
  private faces: number[][] = [];

  constructor(private gl: WebGL2RenderingContext) {
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VS));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FS));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
    }
    this.program = program;
    this.posBuf = gl.createBuffer()!;
    this.nrmBuf = gl.createBuffer()!;
    this.vao = gl.createVertexArray()!;
    this.uViewProj = gl.getUniformLocation(program, "u_viewProj")!;
    this.uEye = gl.getUniformLocation(program, "u_eye")!;

    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.posBuf);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.nrmBuf);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 3, gl.FLOAT, false, 0, 0);
    gl.bindVertexArray(null);
    gl.bindAttribLocation(program, 0, "a_position");
    gl.bindAttribLocation(program, 1, "a_normal");
    gl.linkProgram(program);
    gl.enable(gl.DEPTH_TEST);
  }

  setFaces(faces: number[][]): void {
    this.faces = faces;
    this.expandedPos = new Float32Array(faces.length * 9);
    this.expandedNrm = new Float32Array(faces.length * 9);
  }

  draw(positions: Float32Array, viewProj: Float32Array, eye: [number, number, number]): void {
    const gl = this.gl;
    const P = this.expandedPos;
    const N = this.expandedNrm;
    for (let f = 0; f < this.faces.length; f++) {
      const [a, b, c] = this.faces[f];
      const o = 9 * f;
      for (let j = 0; j < 3; j++) {
        P[o + j] = positions[3 * a + j];
        P[o + 3 + j] = positions[3 * b + j];
        P[o + 6 + j] = positions[3 * c + j];
      }
      const e1x = P[o + 3] - P[o], e1y = P[o + 4] - P[o + 1], e1z = P[o + 5] - P[o + 2];
      const e2x = P[o + 6] - P[o], e2y = P[o + 7] - P[o + 1], e2z = P[o + 8] - P[o + 2];
      let nx = e1y * e2z - e1z * e2y;
      let ny = e1z * e2x - e1x * e2z;
      let nz = e1x * e2y - e1y * e2x;
      const len = Math.hypot(nx, ny, nz) || 1;
      nx /= len; ny /= len; nz /= len;
      for (let v = 0; v < 3; v++) {
        N[o + 3 * v] = nx;
        N[o + 3 * v + 1] = ny;
        N[o + 3 * v + 2] = nz;
      }
    }
    gl.useProgram(this.program);
    gl.bindVertexArray(this.vao);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.posBuf);
    gl.bufferData(gl.ARRAY_BUFFER, P, gl.DYNAMIC_DRAW);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.nrmBuf);
    gl.bufferData(gl.ARRAY_BUFFER, N, gl.DYNAMIC_DRAW);
    gl.uniformMatrix4fv(this.uViewProj, false, viewProj);
    gl.uniform3f(this.uEye, eye[0], eye[1], eye[2]);
    gl.clearColor(0.07, 0.08, 0.1, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.drawArrays(gl.TRIANGLES, 0, this.faces.length * 3);
    gl.bindVertexArray(null);
  }
}
