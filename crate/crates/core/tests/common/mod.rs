pub mod tiny_onnx;
